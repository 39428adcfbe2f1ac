// Command-line front end: gen, train, sample, eval, sweep, bench.
//
// Exit codes: 0 success, 1 runtime failure inside the library, 2 invalid
// command line or configuration.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flowlift/aggregation.hpp"
#include "flowlift/error.hpp"
#include "flowlift/evaluation.hpp"
#include "flowlift/flow.hpp"
#include "flowlift/metrics.hpp"
#include "flowlift/synthdata.hpp"

namespace fs = std::filesystem;
using namespace flowlift;

namespace {

// Thrown for problems with the requested configuration rather than the run.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename Fn>
void validated(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  require(os.is_open(), ErrorCode::kIo, "cannot write '" + path.string() + "'");
  return os;
}

PoseSampler sampler_for(const std::string& name) {
  return name == "animal26" ? PoseSampler::animal26() : PoseSampler::human17();
}

struct GenArgs {
  std::string out;
  std::string skeleton = "human17";
  std::size_t samples = 5000;
  double noise = 0.0;
  std::uint64_t seed = 0;
  std::string export_csv;
  GeneratorConfig generator;
};

struct TrainArgs {
  std::string dataset;
  std::string out;
  std::string loss_csv;
  std::string model_config;
  NetConfig net;
  FlowConfig flow;
  bool quiet = false;
};

struct EvalArgs {
  std::string dataset;
  std::string checkpoint;
  std::string out;
  EvalConfig eval;
};

struct SampleArgs {
  std::string dataset;
  std::string checkpoint;
  std::string out;
  std::size_t index = 0;
  std::size_t hypotheses = 40;
  std::size_t steps = 3;
  bool fha = false;
  std::uint64_t seed = 0;
  std::optional<double> alpha;
  std::size_t top_k = 0;
  std::string mode = "joint";
};

struct SweepArgs {
  std::string dataset;
  std::string checkpoint;
  std::string out;
  EvalConfig eval;
  std::size_t hypotheses = 20;
  std::vector<double> alphas{0, 20, 50, 100, 200, 500, 1000, 2000};
  std::vector<std::size_t> top_ks{5, 10, 15, 0};
};

struct BenchArgs {
  std::string dataset;
  std::string checkpoint;
  std::string out;
  std::vector<std::size_t> steps{1, 3, 8};
  std::vector<std::size_t> hypotheses{1, 10, 40};
  std::size_t inputs = 50;
  std::size_t repeats = 3;
  std::uint64_t seed = 0;
};

void run_gen(const GenArgs& a) {
  std::optional<PoseSampler> sampler;
  validated([&] {
    require(a.samples >= 1, ErrorCode::kInvalidArgument, "--samples must be >= 1");
    require(a.noise >= 0.0, ErrorCode::kInvalidArgument, "--noise must be >= 0");
    require(a.generator.depth_min > 0.0 && a.generator.depth_min <= a.generator.depth_max,
            ErrorCode::kInvalidArgument, "invalid depth range");
    sampler = sampler_for(a.skeleton);
  });
  const Dataset data = generate(*sampler, a.generator, a.samples, a.noise, a.seed);
  save_dataset(a.out, data);
  if (!a.export_csv.empty()) {
    auto os = open_out(a.export_csv);
    export_csv(os, data);
  }
  std::cerr << "wrote " << data.size() << " samples to " << a.out << '\n';
}

void run_train(TrainArgs a, const CLI::App& cmd) {
  if (!a.model_config.empty()) {
    // Flags given on the command line win over the model config file.
    NetConfig file = NetConfig::load(a.model_config, a.net);
    if (cmd.count("--width")) file.width = a.net.width;
    if (cmd.count("--blocks")) file.blocks = a.net.blocks;
    if (cmd.count("--heads")) file.heads = a.net.heads;
    if (cmd.count("--net-seed")) file.seed = a.net.seed;
    if (cmd.count("--residual")) file.residual = a.net.residual;
    a.net = file;
  }
  const Dataset data = load_dataset(a.dataset);
  a.net.joints = data.skeleton.joint_count();
  validated([&] {
    a.net.validate();
    a.flow.validate();
  });

  FlowModel model(data.skeleton, a.net, a.flow);
  std::cerr << "training " << model.net().parameter_count() << " parameters on " << data.size()
            << " samples\n";
  const TrainResult result = train(model, data, [&](const EpochStats& s) {
    if (!a.quiet)
      std::cerr << "epoch " << s.epoch << " loss " << s.mean_loss << " lr " << s.learning_rate << '\n';
  });
  model.save(a.out);
  const std::string loss_path = a.loss_csv.empty() ? a.out + ".loss.csv" : a.loss_csv;
  auto os = open_out(loss_path);
  write_loss_csv(os, result);
}

void run_sample(const SampleArgs& a) {
  RpeaConfig cfg;
  validated([&] {
    cfg = RpeaConfig::defaults(parse_mode(a.mode));
    if (a.alpha) cfg.alpha = *a.alpha;
    cfg.top_k = a.top_k;
    require(a.hypotheses >= 1 && a.steps >= 1, ErrorCode::kInvalidArgument, "N and S must be >= 1");
    require(!a.fha || a.hypotheses == 1 || a.hypotheses % 2 == 0, ErrorCode::kInvalidArgument,
            "--fha needs an even hypothesis count");
  });
  const FlowModel model = FlowModel::load(a.checkpoint);
  const Dataset data = load_dataset(a.dataset, model.skeleton());
  require(a.index < data.size(), ErrorCode::kInvalidArgument, "--index beyond the dataset");
  const Sample& s = data.samples[a.index];
  const HypothesisSet hyps = draw_hypotheses(model, s.keypoints, a.hypotheses, a.steps,
                                             sample_seed(a.seed, a.index), a.fha);
  const Pose3D fused = rpea(hyps, s.keypoints, s.camera, cfg);
  const Eigen::VectorXd spread = joint_uncertainty(hyps);

  auto os = open_out(a.out);
  os << "hypothesis,provenance,joint,x,y,z\n";
  const auto row = [&](const std::string& h, const std::string& prov, const Pose3D& p, Eigen::Index j) {
    os << h << ',' << prov << ',' << j << ',' << format_double(p(j, 0)) << ',' << format_double(p(j, 1))
       << ',' << format_double(p(j, 2)) << '\n';
  };
  for (std::size_t i = 0; i < hyps.size(); ++i)
    for (Eigen::Index j = 0; j < hyps.poses[i].rows(); ++j)
      row(std::to_string(i), hyps.provenance[i] == Provenance::kFlipped ? "flipped" : "original",
          hyps.poses[i], j);
  for (Eigen::Index j = 0; j < fused.rows(); ++j) row("rpea", "fused", fused, j);
  for (Eigen::Index j = 0; j < s.pose.rows(); ++j) row("gt", "truth", s.pose, j);

  std::cerr << "sample " << a.index << ": rpea MPJPE " << mpjpe(fused, s.pose) << " mm, mean spread "
            << spread.mean() << " mm\n";
}

void run_eval(EvalArgs a) {
  validated([&] { a.eval.validate(); });
  const FlowModel model = FlowModel::load(a.checkpoint);
  const Dataset data = load_dataset(a.dataset, model.skeleton());
  const EvalResult result = evaluate(model, data, a.eval);

  const fs::path dir(a.out);
  fs::create_directories(dir);
  {
    auto os = open_out(dir / "summary.csv");
    write_summary_csv(os, result);
  }
  {
    auto os = open_out(dir / "scores.csv");
    write_scores_csv(os, result);
  }
  {
    auto os = open_out(dir / "summary.svg");
    write_summary_svg(os, result);
  }
  write_summary_csv(std::cout, result);
}

void run_sweep(SweepArgs a) {
  a.eval.hypotheses = {a.hypotheses};
  validated([&] {
    a.eval.validate();
    require(a.hypotheses >= 1, ErrorCode::kInvalidArgument, "--hypotheses must be >= 1");
  });
  const FlowModel model = FlowModel::load(a.checkpoint);
  const Dataset data = load_dataset(a.dataset, model.skeleton());
  const auto rows = sweep_rpea(model, data, a.eval, a.hypotheses, a.alphas, a.top_ks);
  auto os = open_out(a.out);
  write_sweep_csv(os, rows);
  write_sweep_csv(std::cout, rows);
}

void run_bench(const BenchArgs& a) {
  const FlowModel model = FlowModel::load(a.checkpoint);
  const Dataset data = load_dataset(a.dataset, model.skeleton());
  const auto rows = bench_sampling(model, data, a.steps, a.hypotheses, a.inputs, a.repeats, a.seed);
  if (!a.out.empty()) {
    auto os = open_out(a.out);
    write_bench_csv(os, rows);
  }
  write_bench_csv(std::cout, rows);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flow-matching 3D pose lifting on synthetic skeleton data"};
  app.require_subcommand(1);
  // INI/TOML file with one [subcommand] section; command-line flags take precedence.
  app.set_config("--config", "", "Read options from a config file");

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic 2D/3D dataset");
  g->set_config("--config", "", "key=value options file");
  g->add_option("--out", gen.out, "Dataset file to write")->required();
  g->add_option("--skeleton", gen.skeleton, "Skeleton preset")
      ->check(CLI::IsMember({"human17", "animal26"}))
      ->capture_default_str();
  g->add_option("--samples", gen.samples, "Number of samples")->capture_default_str();
  g->add_option("--noise", gen.noise, "2D noise std in normalized units")->capture_default_str();
  g->add_option("--seed", gen.seed, "Random seed")->capture_default_str();
  g->add_option("--focal", gen.generator.focal, "Focal length (normalized)")->capture_default_str();
  g->add_option("--depth-min", gen.generator.depth_min, "Minimum root depth (mm)")->capture_default_str();
  g->add_option("--depth-max", gen.generator.depth_max, "Maximum root depth (mm)")->capture_default_str();
  g->add_option("--export-csv", gen.export_csv, "Also write a human-readable CSV");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train the velocity network");
  t->set_config("--config", "", "key=value options file");
  t->add_option("--dataset", tr.dataset, "Training dataset")->required()->check(CLI::ExistingFile);
  t->add_option("--out", tr.out, "Checkpoint file to write")->required();
  t->add_option("--loss-csv", tr.loss_csv, "Loss history CSV (default <out>.loss.csv)");
  t->add_option("--model-config", tr.model_config, "Network key=value file (J, D, L, heads, seed, residual)")
      ->check(CLI::ExistingFile);
  t->add_option("--width", tr.net.width, "Fused feature width D")->capture_default_str();
  t->add_option("--blocks", tr.net.blocks, "Number of blocks L")->capture_default_str();
  t->add_option("--heads", tr.net.heads, "Attention heads")->capture_default_str();
  t->add_flag("--residual", tr.net.residual, "Residual connection around each block");
  t->add_option("--net-seed", tr.net.seed, "Weight initialization seed")->capture_default_str();
  t->add_option("--epochs", tr.flow.epochs, "Training epochs")->capture_default_str();
  t->add_option("--batch", tr.flow.batch_size, "Batch size")->capture_default_str();
  t->add_option("--lr", tr.flow.lr.initial, "Initial learning rate")->capture_default_str();
  t->add_option("--steps", tr.flow.steps, "Euler steps stored with the model")->capture_default_str();
  t->add_option("--seed", tr.flow.seed, "Shuffling and noise seed")->capture_default_str();
  t->add_flag("--quiet", tr.quiet, "No per-epoch progress");

  SampleArgs sa;
  auto* s = app.add_subcommand("sample", "Draw and fuse hypotheses for one dataset sample");
  s->set_config("--config", "", "key=value options file");
  s->add_option("--dataset", sa.dataset, "Dataset")->required()->check(CLI::ExistingFile);
  s->add_option("--checkpoint", sa.checkpoint, "Trained model")->required()->check(CLI::ExistingFile);
  s->add_option("--out", sa.out, "Hypothesis dump (CSV)")->required();
  s->add_option("--index", sa.index, "Sample index")->capture_default_str();
  s->add_option("--hypotheses", sa.hypotheses, "Number of hypotheses N")->capture_default_str();
  s->add_option("--steps", sa.steps, "Euler steps S")->capture_default_str();
  s->add_flag("--fha", sa.fha, "Half the hypotheses from the mirrored input");
  s->add_option("--seed", sa.seed, "Sampling seed")->capture_default_str();
  s->add_option("--alpha", sa.alpha, "RPEA temperature (default depends on --mode)");
  s->add_option("--topk", sa.top_k, "RPEA top-K (0: all)")->capture_default_str();
  s->add_option("--mode", sa.mode, "RPEA mode")->check(CLI::IsMember({"joint", "pose"}))->capture_default_str();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Compare aggregation strategies over N");
  e->set_config("--config", "", "key=value options file");
  e->add_option("--dataset", ev.dataset, "Test dataset")->required()->check(CLI::ExistingFile);
  e->add_option("--checkpoint", ev.checkpoint, "Trained model")->required()->check(CLI::ExistingFile);
  e->add_option("--out", ev.out, "Output directory")->required();
  e->add_option("--hypotheses", ev.eval.hypotheses, "Hypothesis counts N")->delimiter(',')->capture_default_str();
  e->add_option("--steps", ev.eval.steps, "Euler steps S")->capture_default_str();
  e->add_option("--alpha", ev.eval.rpea.joint.alpha, "Joint-wise RPEA temperature")->capture_default_str();
  e->add_option("--topk", ev.eval.rpea.joint.top_k, "Joint-wise RPEA top-K (0: all)")->capture_default_str();
  e->add_option("--pose-alpha", ev.eval.rpea.pose.alpha, "Pose-wise RPEA temperature")->capture_default_str();
  e->add_option("--pose-topk", ev.eval.rpea.pose.top_k, "Pose-wise RPEA top-K (0: all)")->capture_default_str();
  e->add_flag("--fha", ev.eval.fha, "Half the hypotheses from the mirrored input");
  e->add_option("--seed", ev.eval.seed, "Sampling seed")->capture_default_str();
  e->add_option("--max-samples", ev.eval.max_samples, "Evaluate only the first samples (0: all)")
      ->capture_default_str();

  SweepArgs sw;
  auto* w = app.add_subcommand("sweep", "Grid over RPEA temperature and top-K");
  w->set_config("--config", "", "key=value options file");
  w->add_option("--dataset", sw.dataset, "Validation dataset")->required()->check(CLI::ExistingFile);
  w->add_option("--checkpoint", sw.checkpoint, "Trained model")->required()->check(CLI::ExistingFile);
  w->add_option("--out", sw.out, "Sweep CSV")->required();
  w->add_option("--hypotheses", sw.hypotheses, "Hypothesis count N")->capture_default_str();
  w->add_option("--alphas", sw.alphas, "Temperatures")->delimiter(',');
  w->add_option("--topks", sw.top_ks, "Top-K values (0: all)")->delimiter(',');
  w->add_option("--steps", sw.eval.steps, "Euler steps S")->capture_default_str();
  w->add_flag("--fha", sw.eval.fha, "Half the hypotheses from the mirrored input");
  w->add_option("--seed", sw.eval.seed, "Sampling seed")->capture_default_str();
  w->add_option("--max-samples", sw.eval.max_samples, "Use only the first samples (0: all)")
      ->capture_default_str();

  BenchArgs be;
  auto* b = app.add_subcommand("bench", "Time hypothesis sampling over (S, N)");
  b->set_config("--config", "", "key=value options file");
  b->add_option("--dataset", be.dataset, "Inputs to sample for")->required()->check(CLI::ExistingFile);
  b->add_option("--checkpoint", be.checkpoint, "Trained model")->required()->check(CLI::ExistingFile);
  b->add_option("--out", be.out, "Benchmark CSV");
  b->add_option("--steps", be.steps, "Euler step counts")->delimiter(',');
  b->add_option("--hypotheses", be.hypotheses, "Hypothesis counts")->delimiter(',');
  b->add_option("--inputs", be.inputs, "Inputs per timing run")->capture_default_str();
  b->add_option("--repeats", be.repeats, "Timing runs; the median is reported")->capture_default_str();
  b->add_option("--seed", be.seed, "Sampling seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*g) run_gen(gen);
    if (*t) run_train(tr, *t);
    if (*s) run_sample(sa);
    if (*e) run_eval(ev);
    if (*w) run_sweep(sw);
    if (*b) run_bench(be);
  } catch (const ConfigError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 2;
  } catch (const Error& err) {
    std::cerr << "error [" << to_string(err.code()) << "]: " << err.what() << '\n';
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 0;
}
