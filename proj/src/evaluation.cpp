#include "flowlift/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <ostream>
#include <string>

#include "flowlift/error.hpp"
#include "flowlift/metrics.hpp"
#include "flowlift/parallel.hpp"
#include "flowlift/rng.hpp"
#include "flowlift/stats.hpp"

namespace flowlift {

namespace {

constexpr std::uint64_t kEvalStream = 0x4556414CULL;

std::string strategy_color(Strategy s) {
  switch (s) {
    case Strategy::kMean: return "#7f7f7f";
    case Strategy::kJpmaJoint: return "#1f77b4";
    case Strategy::kJpmaPose: return "#17becf";
    case Strategy::kRpeaJoint: return "#d62728";
    case Strategy::kRpeaPose: return "#ff7f0e";
  }
  return "#000000";
}

void svg_panel(std::ostream& os, const std::vector<SummaryRow>& rows, const std::vector<std::size_t>& ns,
               double SummaryRow::*metric, const std::string& title, double x0, double y0, double w,
               double h) {
  double lo = 1e300, hi = -1e300;
  for (const auto& r : rows) {
    lo = std::min(lo, r.*metric);
    hi = std::max(hi, r.*metric);
  }
  if (hi - lo < 1e-9) {
    lo -= 1.0;
    hi += 1.0;
  }
  const double pad = 0.08 * (hi - lo);
  lo -= pad;
  hi += pad;
  const auto px = [&](std::size_t k) {
    return ns.size() == 1 ? x0 + w / 2 : x0 + w * static_cast<double>(k) / static_cast<double>(ns.size() - 1);
  };
  const auto py = [&](double v) { return y0 + h - h * (v - lo) / (hi - lo); };

  os << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << w << "\" height=\"" << h
     << "\" fill=\"none\" stroke=\"#333\"/>\n";
  os << "<text x=\"" << x0 + w / 2 << "\" y=\"" << y0 - 10 << "\" text-anchor=\"middle\">" << title
     << "</text>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", v);
    os << "<text x=\"" << x0 - 6 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
       << buf << "</text>\n";
  }
  for (std::size_t k = 0; k < ns.size(); ++k)
    os << "<text x=\"" << px(k) << "\" y=\"" << y0 + h + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
       << ns[k] << "</text>\n";
  os << "<text x=\"" << x0 + w / 2 << "\" y=\"" << y0 + h + 34 << "\" text-anchor=\"middle\">N</text>\n";

  for (Strategy s : kStrategies) {
    os << "<polyline fill=\"none\" stroke=\"" << strategy_color(s) << "\" stroke-width=\"2\" points=\"";
    for (std::size_t k = 0; k < ns.size(); ++k)
      for (const auto& r : rows)
        if (r.n == ns[k] && r.strategy == s) os << px(k) << ',' << py(r.*metric) << ' ';
    os << "\"/>\n";
  }
}

}  // namespace

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::kMean: return "mean";
    case Strategy::kJpmaJoint: return "jpma-joint";
    case Strategy::kJpmaPose: return "jpma-pose";
    case Strategy::kRpeaJoint: return "rpea-joint";
    case Strategy::kRpeaPose: return "rpea-pose";
  }
  return "?";
}

Strategy parse_strategy(std::string_view text) {
  for (Strategy s : kStrategies)
    if (to_string(s) == text) return s;
  throw Error(ErrorCode::kInvalidArgument, "unknown strategy '" + std::string(text) + "'");
}

Pose3D aggregate(Strategy s, const HypothesisSet& hyps, const Pose2D& observed, const Camera& cam,
                 const RpeaPair& rpea) {
  switch (s) {
    case Strategy::kMean: return mean_aggregate(hyps);
    case Strategy::kJpmaJoint: return best_select(hyps, observed, cam, AggregationMode::kJoint);
    case Strategy::kJpmaPose: return best_select(hyps, observed, cam, AggregationMode::kPose);
    case Strategy::kRpeaJoint: return rpea_jointwise(hyps, observed, cam, rpea.joint);
    case Strategy::kRpeaPose: return rpea_posewise(hyps, observed, cam, rpea.pose);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown strategy");
}

std::uint64_t sample_seed(std::uint64_t seed, std::size_t index) {
  return stream_key({seed, kEvalStream, index});
}

HypothesisSet draw_hypotheses(const FlowModel& model, const Pose2D& observed, std::size_t n,
                              std::size_t steps, std::uint64_t seed, bool fha) {
  if (!fha || n == 1) return sample_hypotheses(model, observed, n, steps, seed);
  require(n % 2 == 0, ErrorCode::kInvalidArgument,
          "flipped-hypothesis aggregation needs an even N, got " + std::to_string(n));
  const HypothesisSampler sampler = [&](const Pose2D& c, std::size_t k, std::uint64_t s) {
    return sample_hypotheses(model, c, k, steps, s);
  };
  return fha_expand(observed, model.skeleton(), sampler, n / 2, seed);
}

HypothesisSet hypothesis_prefix(const HypothesisSet& full, std::size_t n, bool fha) {
  require(n >= 1 && n <= full.size(), ErrorCode::kInvalidArgument, "prefix size out of range");
  HypothesisSet out;
  out.seed = full.seed;
  const auto take = [&](std::size_t i) {
    out.poses.push_back(full.poses[i]);
    out.provenance.push_back(full.provenance.empty() ? Provenance::kOriginal : full.provenance[i]);
  };
  if (!fha || n == 1) {
    for (std::size_t i = 0; i < n; ++i) take(i);
    return out;
  }
  require(n % 2 == 0 && full.size() % 2 == 0, ErrorCode::kInvalidArgument,
          "flipped-hypothesis prefix needs even sizes");
  const std::size_t half = full.size() / 2;
  for (std::size_t i = 0; i < n / 2; ++i) take(i);
  for (std::size_t i = 0; i < n / 2; ++i) take(half + i);
  return out;
}

void EvalConfig::validate() const {
  require(!hypotheses.empty(), ErrorCode::kInvalidArgument, "no hypothesis counts to evaluate");
  require(steps >= 1, ErrorCode::kInvalidArgument, "S must be >= 1");
  for (std::size_t n : hypotheses) {
    require(n >= 1, ErrorCode::kInvalidArgument, "hypothesis counts must be >= 1");
    if (fha && n > 1)
      require(n % 2 == 0, ErrorCode::kInvalidArgument,
              "flipped-hypothesis aggregation needs even N, got " + std::to_string(n));
  }
}

std::vector<SummaryRow> EvalResult::summary() const {
  std::vector<SummaryRow> rows;
  for (const SampleScore& s : scores) {
    auto it = std::find_if(rows.begin(), rows.end(), [&](const SummaryRow& r) {
      return r.n == s.n && r.strategy == s.strategy;
    });
    if (it == rows.end()) {
      rows.push_back({s.n, s.strategy});
      it = rows.end() - 1;
    }
    it->mpjpe += s.mpjpe;
    it->p_mpjpe += s.p_mpjpe;
    it->pck += s.pck;
    it->auc += s.auc;
  }
  const auto count = static_cast<double>(samples);
  for (SummaryRow& r : rows) {
    r.mpjpe /= count;
    r.p_mpjpe /= count;
    r.pck /= count;
    r.auc /= count;
  }
  return rows;
}

std::vector<double> EvalResult::column(std::size_t n, Strategy s, double SampleScore::*metric) const {
  std::vector<double> out;
  for (const SampleScore& sc : scores)
    if (sc.n == n && sc.strategy == s) out.push_back(sc.*metric);
  require(!out.empty(), ErrorCode::kInvalidArgument, "no scores for the requested N and strategy");
  return out;
}

EvalResult evaluate(const FlowModel& model, const Dataset& data, const EvalConfig& config) {
  config.validate();
  require(data.skeleton == model.skeleton(), ErrorCode::kSkeletonMismatch,
          "dataset skeleton differs from the model skeleton");
  const std::size_t count =
      config.max_samples == 0 ? data.size() : std::min(config.max_samples, data.size());
  require(count >= 1, ErrorCode::kInvalidArgument, "nothing to evaluate");
  std::size_t n_max = *std::max_element(config.hypotheses.begin(), config.hypotheses.end());
  if (config.fha && n_max % 2) ++n_max;  // only when every requested N is 1

  std::vector<std::vector<SampleScore>> per_sample(count);
  parallel_for(count, [&](std::size_t i) {
    const Sample& s = data.samples[i];
    const HypothesisSet full =
        draw_hypotheses(model, s.keypoints, n_max, config.steps, sample_seed(config.seed, i), config.fha);
    for (std::size_t n : config.hypotheses) {
      const HypothesisSet hyps = hypothesis_prefix(full, n, config.fha);
      for (Strategy st : kStrategies) {
        const Pose3D pred = aggregate(st, hyps, s.keypoints, s.camera, config.rpea);
        per_sample[i].push_back({i, n, st, mpjpe(pred, s.pose), p_mpjpe(pred, s.pose),
                                 pck(pred, s.pose), auc(pred, s.pose)});
      }
    }
  });

  EvalResult out;
  out.samples = count;
  for (auto& rows : per_sample) out.scores.insert(out.scores.end(), rows.begin(), rows.end());
  return out;
}

std::vector<SweepRow> sweep_rpea(const FlowModel& model, const Dataset& data, const EvalConfig& config,
                                 std::size_t n, const std::vector<double>& alphas,
                                 const std::vector<std::size_t>& top_ks) {
  require(!alphas.empty() && !top_ks.empty(), ErrorCode::kInvalidArgument, "empty sweep grid");
  require(n >= 1 && (!config.fha || n == 1 || n % 2 == 0), ErrorCode::kInvalidArgument,
          "invalid hypothesis count for the sweep");
  const std::size_t count =
      config.max_samples == 0 ? data.size() : std::min(config.max_samples, data.size());
  require(count >= 1, ErrorCode::kInvalidArgument, "nothing to evaluate");

  std::vector<SweepRow> grid;
  for (AggregationMode mode : {AggregationMode::kJoint, AggregationMode::kPose})
    for (std::size_t k : top_ks)
      for (double a : alphas) grid.push_back({a, k, mode});

  std::vector<std::vector<std::pair<double, double>>> per_sample(count);
  parallel_for(count, [&](std::size_t i) {
    const Sample& s = data.samples[i];
    const HypothesisSet hyps =
        draw_hypotheses(model, s.keypoints, n, config.steps, sample_seed(config.seed, i), config.fha);
    for (const SweepRow& g : grid) {
      const RpeaConfig cfg{g.alpha, std::min(g.top_k, n), g.mode};
      const Pose3D pred = rpea(hyps, s.keypoints, s.camera, cfg);
      per_sample[i].emplace_back(mpjpe(pred, s.pose), p_mpjpe(pred, s.pose));
    }
  });
  for (std::size_t g = 0; g < grid.size(); ++g) {
    for (const auto& rows : per_sample) {
      grid[g].mpjpe += rows[g].first;
      grid[g].p_mpjpe += rows[g].second;
    }
    grid[g].mpjpe /= static_cast<double>(count);
    grid[g].p_mpjpe /= static_cast<double>(count);
  }
  return grid;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "alpha,topk,mode,mpjpe,p_mpjpe\n";
  for (const SweepRow& r : rows)
    os << format_double(r.alpha) << ',' << r.top_k << ',' << to_string(r.mode) << ','
       << format_double(r.mpjpe) << ',' << format_double(r.p_mpjpe) << '\n';
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_summary_csv(std::ostream& os, const EvalResult& result) {
  os << "n,strategy,mpjpe,p_mpjpe,pck,auc\n";
  for (const SummaryRow& r : result.summary())
    os << r.n << ',' << to_string(r.strategy) << ',' << format_double(r.mpjpe) << ','
       << format_double(r.p_mpjpe) << ',' << format_double(r.pck) << ',' << format_double(r.auc) << '\n';
}

void write_scores_csv(std::ostream& os, const EvalResult& result) {
  os << "sample,n,strategy,mpjpe,p_mpjpe,pck,auc\n";
  for (const SampleScore& s : result.scores)
    os << s.sample << ',' << s.n << ',' << to_string(s.strategy) << ',' << format_double(s.mpjpe) << ','
       << format_double(s.p_mpjpe) << ',' << format_double(s.pck) << ',' << format_double(s.auc) << '\n';
}

void write_summary_svg(std::ostream& os, const EvalResult& result) {
  const auto rows = result.summary();
  std::vector<std::size_t> ns;
  for (const auto& r : rows)
    if (std::find(ns.begin(), ns.end(), r.n) == ns.end()) ns.push_back(r.n);

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"960\" height=\"420\" "
        "font-family=\"sans-serif\" font-size=\"13\">\n"
     << "<rect width=\"960\" height=\"420\" fill=\"white\"/>\n";
  svg_panel(os, rows, ns, &SummaryRow::mpjpe, "MPJPE (mm)", 70, 40, 340, 300);
  svg_panel(os, rows, ns, &SummaryRow::p_mpjpe, "P-MPJPE (mm)", 500, 40, 340, 300);
  double y = 60;
  for (Strategy s : kStrategies) {
    os << "<line x1=\"860\" y1=\"" << y << "\" x2=\"880\" y2=\"" << y << "\" stroke=\"" << strategy_color(s)
       << "\" stroke-width=\"2\"/>\n<text x=\"886\" y=\"" << y + 4 << "\" font-size=\"11\">" << to_string(s)
       << "</text>\n";
    y += 18;
  }
  os << "</svg>\n";
}

std::vector<BenchRow> bench_sampling(const FlowModel& model, const Dataset& data,
                                     const std::vector<std::size_t>& steps,
                                     const std::vector<std::size_t>& hypotheses,
                                     std::size_t inputs, std::size_t repeats, std::uint64_t seed) {
  require(!data.samples.empty() && inputs >= 1 && repeats >= 1, ErrorCode::kInvalidArgument,
          "benchmark needs data, inputs >= 1 and repeats >= 1");
  inputs = std::min(inputs, data.size());
  std::vector<BenchRow> rows;
  for (std::size_t s : steps)
    for (std::size_t n : hypotheses) {
      std::vector<double> runs;
      for (std::size_t r = 0; r < repeats; ++r) {
        const auto start = std::chrono::steady_clock::now();
        for (std::size_t i = 0; i < inputs; ++i)
          sample_hypotheses(model, data.samples[i].keypoints, n, s, sample_seed(seed, i));
        const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
        runs.push_back(elapsed.count() / static_cast<double>(inputs));
      }
      rows.push_back({s, n, median(runs)});
    }
  return rows;
}

void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows) {
  os << "steps,n,seconds_per_pose\n";
  for (const BenchRow& r : rows) os << r.steps << ',' << r.n << ',' << format_double(r.seconds_per_pose) << '\n';
}

}  // namespace flowlift
