#include "mantra/evaluation.hpp"

#include <fmt/format.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "mantra/binary_io.hpp"
#include "mantra/optim.hpp"

namespace mantra {

double ade(std::span<const Vec2> prediction, std::span<const Vec2> ground_truth,
           std::size_t horizon_steps) {
  if (prediction.size() != ground_truth.size()) {
    throw std::invalid_argument(fmt::format("ade: prediction has {} points, ground truth {}",
                                            prediction.size(), ground_truth.size()));
  }
  if (horizon_steps == 0 || horizon_steps > prediction.size()) {
    throw std::invalid_argument(fmt::format("ade: horizon {} outside 1..{}", horizon_steps,
                                            prediction.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < horizon_steps; ++i) s += distance(prediction[i], ground_truth[i]);
  return s / static_cast<double>(horizon_steps);
}

double fde(std::span<const Vec2> prediction, std::span<const Vec2> ground_truth,
           std::size_t step) {
  if (prediction.size() != ground_truth.size()) {
    throw std::invalid_argument(fmt::format("fde: prediction has {} points, ground truth {}",
                                            prediction.size(), ground_truth.size()));
  }
  if (step == 0 || step > prediction.size()) {
    throw std::invalid_argument(fmt::format("fde: step {} outside 1..{}", step, prediction.size()));
  }
  return distance(prediction[step - 1], ground_truth[step - 1]);
}

double metric_value(Metric metric, std::span<const Vec2> prediction,
                    std::span<const Vec2> ground_truth, std::size_t horizon_steps) {
  return metric == Metric::kAde ? ade(prediction, ground_truth, horizon_steps)
                                : fde(prediction, ground_truth, horizon_steps);
}

double best_of_k(Metric metric, std::span<const Path> ranked, std::span<const Vec2> ground_truth,
                 std::size_t horizon_steps, std::size_t k) {
  if (ranked.empty()) throw std::invalid_argument("best_of_k: empty prediction set");
  if (k == 0) throw std::invalid_argument("best_of_k: K must be positive");
  const std::size_t n = std::min(k, ranked.size());
  double best = metric_value(metric, ranked[0], ground_truth, horizon_steps);
  for (std::size_t j = 1; j < n; ++j) {
    best = std::min(best, metric_value(metric, ranked[j], ground_truth, horizon_steps));
  }
  return best;
}

// --- baselines --------------------------------------------------------------

Path kalman_baseline(std::span<const Vec2> past, std::size_t future_len,
                     const KalmanOptions& options) {
  if (past.size() < 2) throw std::invalid_argument("kalman_baseline: needs at least two points");
  using Mat4 = Eigen::Matrix4d;
  using Vec4 = Eigen::Vector4d;
  Mat4 f = Mat4::Identity();
  f(0, 2) = 1.0;
  f(1, 3) = 1.0;
  Eigen::Matrix<double, 2, 4> h = Eigen::Matrix<double, 2, 4>::Zero();
  h(0, 0) = 1.0;
  h(1, 1) = 1.0;
  const double q = options.sigma_q * options.sigma_q, r = options.sigma_r * options.sigma_r;
  const Mat4 qm = q * Mat4::Identity();
  const Eigen::Matrix2d rm = r * Eigen::Matrix2d::Identity();

  Vec4 x(past[1].x, past[1].y, past[1].x - past[0].x, past[1].y - past[0].y);
  Mat4 p = Vec4(r, r, 2 * r, 2 * r).asDiagonal();
  for (std::size_t t = 2; t < past.size(); ++t) {
    x = f * x;
    p = f * p * f.transpose() + qm;
    const Eigen::Vector2d z(past[t].x, past[t].y);
    const Eigen::Matrix2d s = h * p * h.transpose() + rm;
    const Eigen::Matrix<double, 4, 2> gain = p * h.transpose() * s.inverse();
    x = x + gain * (z - h * x);
    p = (Mat4::Identity() - gain * h) * p;
  }
  Path out;
  out.reserve(future_len);
  for (std::size_t i = 0; i < future_len; ++i) {
    x = f * x;
    out.push_back({x(0), x(1)});
  }
  return out;
}

namespace {

void require_uniform(std::span<const Sample> samples, const char* who) {
  if (samples.empty()) throw std::invalid_argument(fmt::format("{}: empty training set", who));
  for (const auto& s : samples) {
    if (s.past.size() != samples[0].past.size() || s.future.size() != samples[0].future.size()) {
      throw std::invalid_argument(fmt::format("{}: samples have differing window lengths", who));
    }
  }
}

}  // namespace

LinearBaseline LinearBaseline::fit(std::span<const Sample> samples) {
  require_uniform(samples, "linear baseline");
  const std::size_t p = samples[0].past.size(), f = samples[0].future.size();
  Eigen::MatrixXd x(samples.size(), 2 * p + 1), y(samples.size(), 2 * f);
  for (std::size_t n = 0; n < samples.size(); ++n) {
    for (std::size_t i = 0; i < p; ++i) {
      x(n, 2 * i) = samples[n].past[i].x;
      x(n, 2 * i + 1) = samples[n].past[i].y;
    }
    x(n, 2 * p) = 1.0;
    for (std::size_t i = 0; i < f; ++i) {
      y(n, 2 * i) = samples[n].future[i].x;
      y(n, 2 * i + 1) = samples[n].future[i].y;
    }
  }
  const Eigen::MatrixXd w = x.completeOrthogonalDecomposition().solve(y);
  LinearBaseline out;
  out.past_len_ = p;
  out.future_len_ = f;
  out.weights_.resize(static_cast<std::size_t>(w.size()));
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      out.weights_[static_cast<std::size_t>(i * w.cols() + j)] = w(i, j);
    }
  }
  return out;
}

Path LinearBaseline::predict(std::span<const Vec2> past) const {
  if (past.size() != past_len_) {
    throw std::invalid_argument(
        fmt::format("linear baseline fitted on {} past points, got {}", past_len_, past.size()));
  }
  std::vector<double> in(2 * past_len_ + 1);
  for (std::size_t i = 0; i < past_len_; ++i) {
    in[2 * i] = past[i].x;
    in[2 * i + 1] = past[i].y;
  }
  in.back() = 1.0;
  const std::size_t cols = 2 * future_len_;
  std::vector<double> out(cols, 0.0);
  for (std::size_t i = 0; i < in.size(); ++i) {
    for (std::size_t j = 0; j < cols; ++j) out[j] += in[i] * weights_[i * cols + j];
  }
  Path p(future_len_);
  for (std::size_t i = 0; i < future_len_; ++i) p[i] = {out[2 * i], out[2 * i + 1]};
  return p;
}

namespace {

ad::Tensor flatten(std::span<const Path* const> paths, double inv_scale) {
  const std::size_t n = paths.empty() ? 0 : paths.front()->size();
  std::vector<double> v;
  v.reserve(paths.size() * 2 * n);
  for (const auto* p : paths) {
    for (const auto& q : *p) {
      v.push_back(q.x * inv_scale);
      v.push_back(q.y * inv_scale);
    }
  }
  return ad::Tensor::from({paths.size(), 2 * n}, std::move(v));
}

}  // namespace

MlpBaseline MlpBaseline::fit(std::span<const Sample> samples, const MlpOptions& options) {
  require_uniform(samples, "MLP baseline");
  const std::size_t p = samples[0].past.size(), f = samples[0].future.size();
  Rng rng(sub_seed(options.seed, "mlp.init"));
  MlpBaseline m;
  m.l1_ = Dense::create(2 * p, options.hidden, rng);
  m.l2_ = Dense::create(options.hidden, 2 * f, rng);
  m.scale_ = options.coord_scale;
  m.future_len_ = f;

  std::vector<ad::Tensor> params{m.l1_.weight, m.l1_.bias, m.l2_.weight, m.l2_.bias};
  auto adam = AdamState::for_parameters(params, AdamOptions{options.learning_rate});
  Rng shuffle(sub_seed(options.seed, "mlp.shuffle"));
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  const double inv = 1.0 / m.scale_;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle);
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      std::vector<const Path*> pasts, futures;
      for (std::size_t i = start; i < end; ++i) {
        pasts.push_back(&samples[order[i]].past);
        futures.push_back(&samples[order[i]].future);
      }
      zero_grads(params);
      auto out = m.l2_(ad::relu(m.l1_(flatten(pasts, inv))));
      auto loss = ad::mse(out, flatten(futures, inv));
      if (!std::isfinite(loss.item())) {
        throw TrainingDiverged(fmt::format("MLP baseline loss became {} at epoch {}",
                                           loss.item(), epoch));
      }
      loss.backward();
      adam_update(params, adam);
    }
  }
  return m;
}

Path MlpBaseline::predict(std::span<const Vec2> past) const {
  ad::NoGradGuard guard;
  const Path copy(past.begin(), past.end());
  const Path* rows[1] = {&copy};
  const auto out = l2_(ad::relu(l1_(flatten(rows, 1.0 / scale_))));
  Path p(future_len_);
  for (std::size_t i = 0; i < future_len_; ++i) {
    p[i] = {out.at(2 * i) * scale_, out.at(2 * i + 1) * scale_};
  }
  return p;
}

double MlpBaseline::training_mse(std::span<const Sample> samples) const {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& smp : samples) {
    const Path p = predict(smp.past);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const Vec2 d = p[i] - smp.future[i];
      s += d.x * d.x + d.y * d.y;
      n += 2;
    }
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

CoordinateNeighbors::CoordinateNeighbors(std::span<const Sample> samples) {
  for (const auto& s : samples) {
    pasts_.push_back(s.past);
    futures_.push_back(s.future);
  }
}

PredictionSet CoordinateNeighbors::predict(std::span<const Vec2> past, std::size_t k) const {
  if (pasts_.empty()) throw EmptyMemoryError();
  std::vector<double> d(pasts_.size());
  for (std::size_t i = 0; i < pasts_.size(); ++i) {
    if (pasts_[i].size() != past.size()) {
      throw std::invalid_argument("nearest-neighbour query length differs from stored pasts");
    }
    double s = 0.0;
    for (std::size_t j = 0; j < past.size(); ++j) {
      const Vec2 v = pasts_[i][j] - past[j];
      s += v.x * v.x + v.y * v.y;
    }
    d[i] = std::sqrt(s);
  }
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t n = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (d[a] != d[b]) return d[a] < d[b];
                      return a < b;
                    });
  PredictionSet out;
  for (std::size_t i = 0; i < n; ++i) {
    out.futures.push_back(futures_[order[i]]);
    out.scores.push_back(-d[order[i]]);
    out.entries.push_back(order[i]);
  }
  return out;
}

// --- evaluation ---------------------------------------------------------------

const EvalRow& EvalReport::row(const std::string& method, std::size_t k) const {
  for (const auto& r : rows) {
    if (r.method == method && r.k == k) return r;
  }
  throw std::out_of_range(fmt::format("report has no row for method '{}' at K={}", method, k));
}

std::vector<Path> MantraPredictor::predict(const Sample& sample, std::size_t k) {
  PredictionSet set;
  PastEncoding pi;
  if (a_.neighbors) {
    set = a_.neighbors->predict(sample.past, k);
  } else {
    if (!a_.model || !a_.memory) throw std::invalid_argument("predictor needs a model and memory");
    pi = a_.model->encode_past(sample.past);
    if (a_.memory->empty()) throw EmptyMemoryError();
    set = predict_encoded(pi, *a_.memory, k, *a_.model, a_.decode);
  }
  std::vector<Path> out;
  out.reserve(set.futures.size());
  const FeatureMap* fm = nullptr;
  if (a_.refiner && !a_.neighbors) {
    if (!a_.maps || !a_.maps->count(sample.map_id)) {
      throw std::invalid_argument(
          fmt::format("no semantic map '{}' for track '{}'", sample.map_id, sample.track_id));
    }
    auto it = features_.find(sample.map_id);
    if (it == features_.end()) {
      it = features_.emplace(sample.map_id,
                             a_.refiner->extract_feature_map(a_.maps->at(sample.map_id)))
               .first;
    }
    fm = &it->second;
  }
  for (const auto& f : set.futures) {
    Path w = denormalize(f, sample.transform);
    if (fm) w = a_.refiner->refine(w, sample.transform, pi, *fm).result();
    out.push_back(std::move(w));
  }
  return out;
}

namespace {

std::vector<std::size_t> horizon_steps(const WindowSpec& window, std::span<const double> secs) {
  std::vector<std::size_t> out;
  for (double s : secs) {
    const std::size_t st = window.steps_for(s);
    if (st == 0 || st > window.future_len()) {
      throw std::invalid_argument(fmt::format("horizon {} s lies outside the {} s future", s,
                                              window.future_seconds));
    }
    out.push_back(st);
  }
  return out;
}

void add_baseline_row(EvalReport& report, const std::string& name,
                      std::span<const Sample> test, std::span<const std::size_t> steps,
                      const std::function<Path(const Sample&)>& predict) {
  EvalRow row{name, 1, 0, std::vector<double>(steps.size(), 0.0),
              std::vector<double>(steps.size(), 0.0)};
  for (const auto& s : test) {
    const Path pred = denormalize(predict(s), s.transform);
    const Path gt = s.world_future();
    for (std::size_t h = 0; h < steps.size(); ++h) {
      row.ade[h] += ade(pred, gt, steps[h]);
      row.fde[h] += fde(pred, gt, steps[h]);
    }
  }
  for (std::size_t h = 0; h < steps.size(); ++h) {
    row.ade[h] /= static_cast<double>(test.size());
    row.fde[h] /= static_cast<double>(test.size());
  }
  report.rows.push_back(std::move(row));
}

}  // namespace

std::vector<SampleErrors> mantra_sample_errors(const MantraArtifacts& artifacts,
                                               std::span<const Sample> test,
                                               const WindowSpec& window,
                                               const EvalOptions& options) {
  if (options.k_list.empty()) throw std::invalid_argument("K list is empty");
  const auto steps = horizon_steps(window, options.horizons_s);
  const std::size_t kmax = *std::max_element(options.k_list.begin(), options.k_list.end());
  MantraPredictor predictor(artifacts);
  std::vector<SampleErrors> out;
  out.reserve(test.size());
  for (const auto& s : test) {
    const auto ranked = predictor.predict(s, kmax);
    const Path gt = s.world_future();
    SampleErrors e;
    for (std::size_t k : options.k_list) {
      std::vector<double> a, f;
      for (std::size_t st : steps) {
        a.push_back(best_of_k(Metric::kAde, ranked, gt, st, k));
        f.push_back(best_of_k(Metric::kFde, ranked, gt, st, k));
      }
      e.ade.push_back(std::move(a));
      e.fde.push_back(std::move(f));
    }
    out.push_back(std::move(e));
  }
  return out;
}

EvalReport evaluate(const MantraArtifacts& artifacts, std::span<const Sample> train,
                    std::span<const Sample> test, const WindowSpec& window,
                    const EvalOptions& options) {
  if (test.empty()) throw std::invalid_argument("evaluate: empty test set");
  const auto steps = horizon_steps(window, options.horizons_s);
  EvalReport report;
  report.seed = options.seed;
  report.config_hash = options.config_hash;
  report.samples = test.size();
  report.train_size = train.size();
  report.horizons_s = options.horizons_s;

  const auto errors = mantra_sample_errors(artifacts, test, window, options);
  const std::size_t memory_size = artifacts.neighbors ? artifacts.neighbors->size()
                                  : artifacts.memory  ? artifacts.memory->size()
                                                      : 0;
  for (std::size_t ki = 0; ki < options.k_list.size(); ++ki) {
    EvalRow row{options.method_name, options.k_list[ki], memory_size,
                std::vector<double>(steps.size(), 0.0), std::vector<double>(steps.size(), 0.0)};
    for (const auto& e : errors) {
      for (std::size_t h = 0; h < steps.size(); ++h) {
        row.ade[h] += e.ade[ki][h];
        row.fde[h] += e.fde[ki][h];
      }
    }
    for (std::size_t h = 0; h < steps.size(); ++h) {
      row.ade[h] /= static_cast<double>(test.size());
      row.fde[h] /= static_cast<double>(test.size());
    }
    report.rows.push_back(std::move(row));
  }

  if (options.baselines) {
    const std::size_t f = window.future_len();
    add_baseline_row(report, "kalman", test, steps, [&](const Sample& s) {
      return kalman_baseline(s.past, f, options.kalman);
    });
    const auto linear = LinearBaseline::fit(train);
    add_baseline_row(report, "linear", test, steps,
                     [&](const Sample& s) { return linear.predict(s.past); });
    auto mlp_opts = options.mlp;
    mlp_opts.seed = sub_seed(options.seed, "mlp");
    const auto mlp = MlpBaseline::fit(train, mlp_opts);
    add_baseline_row(report, "mlp", test, steps,
                     [&](const Sample& s) { return mlp.predict(s.past); });
  }
  return report;
}

std::string format_report(const EvalReport& report) {
  std::string out = fmt::format("# config_hash={} seed={} samples={} train_size={}\n",
                                hex64(report.config_hash), report.seed, report.samples,
                                report.train_size);
  out += "method,k,memory_size";
  for (double h : report.horizons_s) out += fmt::format(",ade_{:g}s", h);
  for (double h : report.horizons_s) out += fmt::format(",fde_{:g}s", h);
  out += '\n';
  for (const auto& r : report.rows) {
    out += fmt::format("{},{},{}", r.method, r.k, r.memory_size);
    for (double v : r.ade) out += fmt::format(",{:.17g}", v);
    for (double v : r.fde) out += fmt::format(",{:.17g}", v);
    out += '\n';
  }
  return out;
}

// --- ablations --------------------------------------------------------------

namespace {

AblationRow ablation_row(const std::string& name, const MantraArtifacts& a,
                         std::span<const Sample> train, std::span<const Sample> test,
                         const WindowSpec& window, std::size_t k) {
  EvalOptions opts;
  opts.k_list = {k};
  const auto errors = mantra_sample_errors(a, test, window, opts);
  AblationRow row;
  row.name = name;
  row.memory_size = a.neighbors ? a.neighbors->size() : a.memory->size();
  row.memory_fraction =
      train.empty() ? 0.0 : static_cast<double>(row.memory_size) / static_cast<double>(train.size());
  row.fde.assign(opts.horizons_s.size(), 0.0);
  for (const auto& e : errors) {
    for (std::size_t h = 0; h < row.fde.size(); ++h) row.fde[h] += e.fde[0][h];
  }
  for (auto& v : row.fde) v /= static_cast<double>(test.size());
  return row;
}

}  // namespace

std::vector<AblationRow> ablation_matrix(const MantraArtifacts& full,
                                         const EncDecModel& pretrained,
                                         std::span<const Sample> train,
                                         std::span<const Sample> test, const WindowSpec& window,
                                         std::size_t k) {
  std::vector<AblationRow> rows;
  rows.push_back(ablation_row("full", full, train, test, window, k));

  MantraArtifacts no_ref = full;
  no_ref.refiner = nullptr;
  no_ref.model = &pretrained;
  rows.push_back(ablation_row("no-refine", no_ref, train, test, window, k));

  MantraArtifacts no_dec = no_ref;
  no_dec.decode = DecodeMode::kCopyFuture;
  rows.push_back(ablation_row("no-decoder", no_dec, train, test, window, k));

  WriteRule all;
  all.write_all = true;
  const MemoryStore everything = fill_memory(train, *full.model, Controller{}, all);
  MantraArtifacts no_ctrl = full;
  no_ctrl.memory = &everything;
  rows.push_back(ablation_row("no-controller", no_ctrl, train, test, window, k));

  const CoordinateNeighbors nn(train);
  MantraArtifacts no_encdec = no_ref;
  no_encdec.neighbors = &nn;
  rows.push_back(ablation_row("no-encdec", no_encdec, train, test, window, k));
  return rows;
}

std::string format_ablations(std::span<const AblationRow> rows, std::uint64_t config_hash) {
  std::string out = fmt::format("# config_hash={}\nvariant,memory_size,memory_fraction",
                                hex64(config_hash));
  const std::size_t n = rows.empty() ? 0 : rows.front().fde.size();
  for (std::size_t h = 0; h < n; ++h) out += fmt::format(",fde_{}s", h + 1);
  out += '\n';
  for (const auto& r : rows) {
    out += fmt::format("{},{},{:.17g}", r.name, r.memory_size, r.memory_fraction);
    for (double v : r.fde) out += fmt::format(",{:.17g}", v);
    out += '\n';
  }
  return out;
}

// --- online experiment --------------------------------------------------------

double OnlineCurve::write_fraction() const {
  std::size_t writes = 0, observed_total = 0;
  for (const auto& run : runs) {
    if (run.empty()) continue;
    writes += run.back().writes;
    observed_total += run.back().observed;
  }
  return observed_total ? static_cast<double>(writes) / static_cast<double>(observed_total) : 0.0;
}

OnlineCurve online_experiment(const EncDecModel& model, const Controller& controller,
                              const MemoryStore& memory0, std::span<const Sample> stream,
                              const OnlineOptions& options) {
  if (options.batch == 0 || options.batch >= stream.size()) {
    throw std::invalid_argument(fmt::format(
        "online batch {} must be positive and smaller than the {} stream samples", options.batch,
        stream.size()));
  }
  if (options.runs == 0) throw std::invalid_argument("online experiment needs at least one run");
  std::vector<PastEncoding> pis;
  pis.reserve(stream.size());
  for (const auto& s : stream) pis.push_back(model.encode_past(s.past));

  auto score = [&](const MemoryStore& memory, std::span<const std::size_t> remaining) {
    if (memory.empty()) return std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (std::size_t i : remaining) {
      const auto set = predict_encoded(pis[i], memory, options.k, model);
      const auto& gt = stream[i].future;
      sum += best_of_k(Metric::kFde, set.futures, gt, gt.size(), options.k);
    }
    return sum / static_cast<double>(remaining.size());
  };

  OnlineCurve curve;
  for (std::size_t r = 0; r < options.runs; ++r) {
    Rng rng(sub_seed(options.seed, fmt::format("online.run{}", r)));
    std::vector<std::size_t> order(stream.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    MemoryStore memory = memory0;
    std::vector<OnlinePoint> run;
    std::size_t next = 0, writes = 0;
    run.push_back({0, memory.size(), score(memory, order), 0});
    while (stream.size() - next > options.batch) {
      for (std::size_t j = 0; j < options.batch; ++j, ++next) {
        const std::size_t i = order[next];
        const auto d = online_ingest(stream[i], (std::uint64_t{1} << 32) + i, memory, model,
                                     controller, options.rule, static_cast<std::int64_t>(r));
        writes += d.written ? 1 : 0;
      }
      const std::span<const std::size_t> rest(order.data() + next, order.size() - next);
      run.push_back({next, memory.size(), score(memory, rest), writes});
    }
    curve.runs.push_back(std::move(run));
  }

  const std::size_t points = curve.runs.front().size();
  for (std::size_t t = 0; t < points; ++t) {
    double mem = 0.0, mean = 0.0;
    for (const auto& run : curve.runs) {
      mem += static_cast<double>(run[t].memory_size);
      mean += run[t].error;
    }
    const double n = static_cast<double>(curve.runs.size());
    mean /= n;
    double var = 0.0;
    for (const auto& run : curve.runs) var += (run[t].error - mean) * (run[t].error - mean);
    curve.observed.push_back(curve.runs.front()[t].observed);
    curve.mean_memory.push_back(mem / n);
    curve.mean_error.push_back(mean);
    curve.error_variance.push_back(var / n);
  }
  return curve;
}

std::string format_online_curve(const OnlineCurve& curve, std::uint64_t config_hash) {
  std::string out = fmt::format("# config_hash={} runs={} write_fraction={:.17g}\n",
                                hex64(config_hash), curve.runs.size(), curve.write_fraction());
  out += "observed,mean_memory_size,mean_error,error_variance\n";
  for (std::size_t t = 0; t < curve.observed.size(); ++t) {
    out += fmt::format("{},{:.17g},{:.17g},{:.17g}\n", curve.observed[t], curve.mean_memory[t],
                       curve.mean_error[t], curve.error_variance[t]);
  }
  return out;
}

namespace {

std::string polyline_panel(double x0, const std::string& title, std::span<const std::size_t> xs,
                           std::span<const double> ys, const char* colour) {
  constexpr double w = 360, h = 240, pad = 40;
  const double xmax = xs.empty() ? 1.0 : std::max<double>(1.0, static_cast<double>(xs.back()));
  double ymax = 0.0;
  for (double y : ys) {
    if (std::isfinite(y)) ymax = std::max(ymax, y);
  }
  if (ymax <= 0.0) ymax = 1.0;
  std::string pts;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!std::isfinite(ys[i])) continue;
    const double px = x0 + pad + (w - 2 * pad) * static_cast<double>(xs[i]) / xmax;
    const double py = h - pad - (h - 2 * pad) * ys[i] / ymax;
    pts += fmt::format("{:.2f},{:.2f} ", px, py);
  }
  std::string s;
  s += fmt::format(
      "<rect x=\"{}\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"white\" stroke=\"#ccc\"/>\n", x0,
      w, h);
  s += fmt::format("<text x=\"{}\" y=\"20\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n",
                   x0 + w / 2, title);
  s += fmt::format(
      "<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n"
      "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{3}\" stroke=\"black\"/>\n",
      x0 + pad, h - pad, x0 + w - pad, pad);
  s += fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"10\">{:g}</text>\n", x0 + 4, pad + 4, ymax);
  s += fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\">{:g}</text>\n",
                   x0 + w - pad, h - pad + 14, xmax);
  s += fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"middle\">samples "
                   "observed</text>\n",
                   x0 + w / 2, h - 8);
  s += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n",
                   colour, pts);
  return s;
}

}  // namespace

std::string online_curve_svg(const OnlineCurve& curve) {
  std::string s =
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"740\" height=\"240\" "
      "viewBox=\"0 0 740 240\">\n";
  s += polyline_panel(0, "memory size", curve.observed, curve.mean_memory, "#1f77b4");
  s += polyline_panel(380, "best-of-K FDE (m)", curve.observed, curve.mean_error, "#d62728");
  s += "</svg>\n";
  return s;
}

}  // namespace mantra
