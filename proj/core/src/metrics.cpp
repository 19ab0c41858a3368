#include "hetseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "hetseg/log.hpp"

#include "hetseg/error.hpp"
#include "hetseg/objectives.hpp"

namespace fs = std::filesystem;

namespace hetseg {

namespace {

double ratio_or_convention(std::int64_t num, std::int64_t den, std::int64_t other_errors) {
  if (den > 0) return static_cast<double>(num) / static_cast<double>(den);
  return other_errors == 0 ? 1.0 : 0.0;
}

MetricSummary summarize(const std::vector<FoldRecord>& records, double FoldRecord::*field) {
  MetricSummary s;
  const auto n = static_cast<double>(records.size());
  for (const auto& r : records) s.mean += r.*field;
  s.mean /= n;
  double var = 0.0;
  for (const auto& r : records) var += (r.*field - s.mean) * (r.*field - s.mean);
  s.std = std::sqrt(var / n);
  return s;
}

std::string full_precision(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

constexpr std::int64_t kEvalBatch = 64;

torch::Tensor predict_all(Segmenter& seg, const Dataset& data,
                          const std::function<torch::Tensor(const torch::Tensor&)>& preprocess) {
  EvalModeGuard eval(*seg);
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> parts;
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t start = 0; start < idx.size(); start += kEvalBatch) {
    const auto stop = std::min(idx.size(), start + static_cast<std::size_t>(kEvalBatch));
    auto x = data.images(std::span<const std::size_t>(idx).subspan(start, stop - start));
    if (preprocess) x = preprocess(x);
    parts.push_back(seg->forward(x));
  }
  return torch::cat(parts, 0);
}

}  // namespace

PixelCounts count_pixels(const torch::Tensor& pred_hard, const torch::Tensor& truth) {
  if (pred_hard.sizes() != truth.sizes()) throw ShapeError("pixel_metrics: prediction and truth shapes differ");
  const auto class_dim = pred_hard.dim() == 4 ? 1 : 0;
  auto p = pred_hard.select(class_dim, 1) > 0.5;
  auto t = truth.select(class_dim, 1) > 0.5;
  PixelCounts c;
  c.tp = (p & t).sum().item<std::int64_t>();
  c.fp = (p & ~t).sum().item<std::int64_t>();
  c.fn = (~p & t).sum().item<std::int64_t>();
  return c;
}

PixelMetrics metrics_from_counts(const PixelCounts& c) {
  PixelMetrics m;
  m.recall = ratio_or_convention(c.tp, c.tp + c.fn, c.fp);
  m.precision = ratio_or_convention(c.tp, c.tp + c.fp, c.fn);
  m.dsc = ratio_or_convention(2 * c.tp, 2 * c.tp + c.fp + c.fn, 0);
  return m;
}

PixelMetrics pixel_metrics(const torch::Tensor& pred_hard, const torch::Tensor& truth) {
  return metrics_from_counts(count_pixels(pred_hard, truth));
}

std::optional<double> average_precision(std::span<const float> scores, std::span<const std::uint8_t> truth) {
  if (scores.size() != truth.size()) throw ShapeError("average_precision: scores and truth differ in length");
  const auto positives = std::count_if(truth.begin(), truth.end(), [](auto t) { return t != 0; });
  if (positives == 0) return std::nullopt;

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  // NaN scores rank below everything else and tie with each other.
  auto rank_above = [&](std::size_t a, std::size_t b) {
    if (std::isnan(scores[a])) return false;
    return std::isnan(scores[b]) || scores[a] > scores[b];
  };
  auto tied = [&](std::size_t a, std::size_t b) { return !rank_above(a, b) && !rank_above(b, a); };
  std::sort(order.begin(), order.end(), rank_above);

  double sum = 0.0;
  std::int64_t seen = 0;
  std::int64_t seen_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::int64_t group_pos = 0;
    while (j < order.size() && tied(order[j], order[i])) {
      group_pos += truth[order[j]] != 0 ? 1 : 0;
      ++j;
    }
    seen += static_cast<std::int64_t>(j - i);
    seen_pos += group_pos;
    sum += static_cast<double>(group_pos) * static_cast<double>(seen_pos) / static_cast<double>(seen);
    i = j;
  }
  return sum / static_cast<double>(positives);
}

std::optional<double> average_precision(const torch::Tensor& scores, const torch::Tensor& truth) {
  auto s = scores.detach().to(torch::kFloat32).contiguous().flatten();
  auto t = (truth.detach() > 0.5).to(torch::kUInt8).contiguous().flatten();
  return average_precision(std::span<const float>(s.data_ptr<float>(), static_cast<std::size_t>(s.numel())),
                           std::span<const std::uint8_t>(t.data_ptr<std::uint8_t>(), static_cast<std::size_t>(t.numel())));
}

MetricsReport aggregate(std::vector<FoldRecord> records) {
  if (records.empty()) throw ConfigError("aggregate: no records");
  MetricsReport report;
  report.recall = summarize(records, &FoldRecord::recall);
  report.precision = summarize(records, &FoldRecord::precision);
  report.dsc = summarize(records, &FoldRecord::dsc);
  report.ap = summarize(records, &FoldRecord::ap);
  report.records = std::move(records);
  return report;
}

nlohmann::json to_json(const MetricsReport& report) {
  nlohmann::json j;
  j["csv_schema_version"] = kMetricsCsvVersion;
  j["records"] = nlohmann::json::array();
  for (const auto& r : report.records) {
    nlohmann::json rec{{"fold", r.fold},     {"seed", r.seed}, {"recall", r.recall},
                       {"precision", r.precision}, {"dsc", r.dsc},   {"ap", r.ap}};
    if (!r.method.empty()) {
      rec["method"] = r.method;
      rec["fraction"] = r.fraction;
    }
    j["records"].push_back(std::move(rec));
  }
  for (const auto& [name, s] : {std::pair{"recall", report.recall}, std::pair{"precision", report.precision},
                                std::pair{"dsc", report.dsc}, std::pair{"ap", report.ap}}) {
    j["aggregate"][name] = {{"mean", s.mean}, {"std", s.std}};
  }
  return j;
}

void emit_report(const MetricsReport& report, const fs::path& dir) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "metrics.json", std::ios::trunc);
    if (!out) throw DataError("cannot write '" + (dir / "metrics.json").string() + "'");
    out << to_json(report).dump(2) << '\n';
  }
  std::ofstream csv(dir / "metrics.csv", std::ios::trunc);
  if (!csv) throw DataError("cannot write '" + (dir / "metrics.csv").string() + "'");
  csv << kMetricsCsvHeader << '\n';
  for (const auto& r : report.records) {
    csv << r.fold << ',' << r.seed << ',' << full_precision(r.recall) << ',' << full_precision(r.precision) << ','
        << full_precision(r.dsc) << ',' << full_precision(r.ap) << '\n';
  }
}

std::vector<FoldRecord> read_metrics_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  if (line != kMetricsCsvHeader) throw DataError("'" + path.string() + "': unexpected header '" + line + "'");
  std::vector<FoldRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw DataError("'" + path.string() + "': malformed row '" + line + "'");
    FoldRecord r;
    r.fold = std::stoi(cells[0]);
    r.seed = std::stoull(cells[1]);
    r.recall = std::stod(cells[2]);
    r.precision = std::stod(cells[3]);
    r.dsc = std::stod(cells[4]);
    r.ap = std::stod(cells[5]);
    out.push_back(r);
  }
  return out;
}

Evaluation evaluate_segmenter(Segmenter& seg, const Dataset& labeled,
                              const std::function<torch::Tensor(const torch::Tensor&)>& preprocess) {
  if (labeled.empty()) throw DataError("evaluation: dataset is empty");
  if (!labeled.all_labeled()) throw DataError("evaluation: every sample needs a ground-truth mask");
  auto soft = predict_all(seg, labeled, preprocess);
  auto hard = hard_from_soft(soft);
  auto truth = labeled.masks();

  std::map<std::string, std::vector<std::int64_t>> by_patient;
  for (std::size_t i = 0; i < labeled.size(); ++i) by_patient[labeled[i].patient_id].push_back(static_cast<std::int64_t>(i));

  Evaluation ev;
  int ap_count = 0;
  for (const auto& [patient, rows] : by_patient) {
    auto index = torch::tensor(rows, torch::kLong);
    auto m = pixel_metrics(hard.index_select(0, index), truth.index_select(0, index));
    ev.pixel.recall += m.recall;
    ev.pixel.precision += m.precision;
    ev.pixel.dsc += m.dsc;
    auto ap = average_precision(soft.index_select(0, index).select(1, 1), truth.index_select(0, index).select(1, 1));
    if (ap) {
      ev.ap += *ap;
      ++ap_count;
    } else {
      ++ev.ap_excluded;
    }
    ++ev.patients;
  }
  ev.pixel.recall /= ev.patients;
  ev.pixel.precision /= ev.patients;
  ev.pixel.dsc /= ev.patients;
  ev.ap = ap_count > 0 ? ev.ap / ap_count : 0.0;
  if (ev.ap_excluded > 0) {
    log::info("evaluation: ", ev.ap_excluded, " patient(s) without lesion pixels excluded from AP");
  }
  ev.mean_entropy = loss::entropy_loss(soft).item<double>();
  return ev;
}

double mean_prediction_entropy(Segmenter& seg, const Dataset& images) {
  return loss::entropy_loss(predict_all(seg, images, {})).item<double>();
}

double lesion_preservation_score(const std::function<torch::Tensor(const torch::Tensor&)>& cycle_fn,
                                 Segmenter& seg_s, const Dataset& source_labeled) {
  if (source_labeled.empty() || !source_labeled.all_labeled()) {
    throw DataError("lesion preservation: needs a non-empty labeled source set");
  }
  EvalModeGuard eval(*seg_s);
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> preds;
  std::vector<std::size_t> idx(source_labeled.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t start = 0; start < idx.size(); start += kEvalBatch) {
    const auto stop = std::min(idx.size(), start + static_cast<std::size_t>(kEvalBatch));
    auto x = source_labeled.images(std::span<const std::size_t>(idx).subspan(start, stop - start));
    preds.push_back(seg_s->forward(cycle_fn(x)));
  }
  auto p = torch::cat(preds, 0);
  return -loss::semantic_cycle_loss(p, source_labeled.masks()).item<double>();
}

double lesion_preservation_score(Translator& translator, Segmenter& seg_s, const Dataset& source_labeled,
                                 std::uint64_t seed) {
  EvalModeGuard eval(*translator);
  auto gen = at::detail::createCPUGenerator(seed);
  const auto dim = translator->config().style_dim;
  return lesion_preservation_score(
      [&](const torch::Tensor& x) {
        return translator->cycle(x, Domain::source, sample_style_prior(gen, x.size(0), dim));
      },
      seg_s, source_labeled);
}

void emit_sweep_csv(const std::vector<SweepPoint>& series, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "fraction,method,fold,seed,metric,value\n";
  for (const auto& p : series) {
    out << full_precision(p.fraction) << ',' << p.method << ',' << p.fold << ',' << p.seed << ',' << p.metric << ','
        << full_precision(p.value) << '\n';
  }
}

std::vector<fs::path> emit_plots(const std::vector<SweepPoint>& series, const fs::path& dir) {
  fs::create_directories(dir);
  // metric -> method -> fraction -> (sum, count)
  std::map<std::string, std::map<std::string, std::map<double, std::pair<double, int>>>> table;
  for (const auto& p : series) {
    auto& cell = table[p.metric][p.method][p.fraction];
    cell.first += p.value;
    cell.second += 1;
  }
  static constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  constexpr double kW = 480, kH = 320, kLeft = 60, kRight = 140, kTop = 30, kBottom = 45;
  const double plot_w = kW - kLeft - kRight;
  const double plot_h = kH - kTop - kBottom;

  std::vector<fs::path> written;
  for (const auto& [metric, methods] : table) {
    std::ostringstream svg;
    svg << std::fixed << std::setprecision(2);
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << kLeft << "\" y=\"18\" font-size=\"13\">" << metric << " vs labeled target fraction</text>\n";
    svg << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + plot_h << "\" x2=\"" << kLeft + plot_w << "\" y2=\""
        << kTop + plot_h << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kTop + plot_h
        << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
      const double v = t / 4.0;
      svg << "<text x=\"" << kLeft + v * plot_w - 8 << "\" y=\"" << kTop + plot_h + 16 << "\" font-size=\"10\">" << v
          << "</text>\n";
      svg << "<text x=\"" << kLeft - 34 << "\" y=\"" << kTop + (1 - v) * plot_h + 4 << "\" font-size=\"10\">" << v
          << "</text>\n";
    }
    std::size_t color = 0;
    for (const auto& [method, points] : methods) {
      const auto* c = kColors[color++ % std::size(kColors)];
      svg << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
      for (const auto& [fraction, acc] : points) {
        const double y = acc.first / acc.second;
        svg << kLeft + fraction * plot_w << ',' << kTop + (1 - y) * plot_h << ' ';
      }
      svg << "\"/>\n";
      const double legend_y = kTop + 16.0 * static_cast<double>(color);
      svg << "<text x=\"" << kLeft + plot_w + 10 << "\" y=\"" << legend_y << "\" font-size=\"11\" fill=\"" << c << "\">"
          << method << "</text>\n";
    }
    svg << "</svg>\n";
    const auto path = dir / ("sweep_" + metric + ".svg");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << svg.str();
    written.push_back(path);
  }
  return written;
}

}  // namespace hetseg
