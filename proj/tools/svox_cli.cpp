#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "svox/svox.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

/// Run record written next to every command's outputs.
struct RunManifest {
  std::string command;
  std::vector<std::string> arguments;
  json seeds = json::object();
  json inputs = json::object();
  json outputs = json::array();
  json timings = json::object();
  Clock::time_point start = Clock::now();

  void input(const fs::path& p) {
    const auto bytes = svox::binary::read_file(p, "cli");
    inputs[p.string()] = hex(svox::binary::fnv1a64(bytes));
  }

  void time(const std::string& stage, Clock::time_point since) {
    timings[stage] = std::chrono::duration<double>(Clock::now() - since).count();
  }

  void write(const fs::path& path) {
    time("total", start);
    const json j{{"command", command},         {"arguments", arguments}, {"seeds", seeds},
                 {"input_checksums", inputs}, {"outputs", outputs},     {"tool_version", svox::kVersion},
                 {"timings_seconds", timings}};
    const std::string s = j.dump(2) + "\n";
    svox::binary::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()), "cli");
  }

  static std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
  }
};

void write_text(const fs::path& path, const std::string& s) {
  svox::binary::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()), "cli");
}

svox::Dims parse_dims(const std::string& s) {
  svox::Dims d{};
  std::istringstream is(s);
  std::string part;
  int k = 0;
  while (std::getline(is, part, ',')) {
    if (k == 3) throw svox::Error("cli", "--dims takes exactly three values, got '" + s + "'");
    try {
      std::size_t used = 0;
      d[k] = std::stoi(part, &used);
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw svox::Error("cli", "--dims: '" + part + "' is not an integer");
    }
    ++k;
  }
  if (k != 3) throw svox::Error("cli", "--dims takes exactly three values, got '" + s + "'");
  return d;
}

svox::ModelConfig resolve_config(const std::string& name) {
  if (name == "paper") return svox::ModelConfig::paper();
  if (name == "tiny") return svox::ModelConfig::tiny();
  return svox::load_config_file(name);
}

std::string volume_name(const std::string& stem) { return stem + ".svox"; }

struct PhantomArgs {
  std::string out;
  std::uint64_t seed = 42;
  int count = 2;
  std::string dims = "64,64,64";
};

void cmd_phantom(const PhantomArgs& a, RunManifest& m) {
  svox::PhantomSpec spec;
  spec.dims = parse_dims(a.dims);
  const fs::path out(a.out);
  m.seeds["phantom_base"] = a.seed;
  const auto t0 = Clock::now();
  const auto corpus = svox::generate_corpus(a.count, a.seed, spec);
  m.time("generate", t0);
  for (int i = 0; i < a.count; ++i) {
    const fs::path dir = out / ("subject_" + std::to_string(i));
    fs::create_directories(dir);
    const auto& p = corpus[static_cast<std::size_t>(i)];
    svox::write_volume(p.echo1, dir / volume_name("echo1"));
    svox::write_volume(p.echo2, dir / volume_name("echo2"));
    svox::write_volume(p.ct, dir / volume_name("ct"));
    svox::write_mask(p.mask, dir / volume_name("mask"), p.echo1.spacing);
    svox::PhantomSpec s = spec;
    s.seed = a.seed + static_cast<std::uint64_t>(i);
    write_text(dir / "spec.json", json(s).dump(2) + "\n");
    m.outputs.push_back(dir.string());
  }
  m.write(out / "manifest_phantom.json");
  std::cout << "wrote " << a.count << " phantom subjects to " << out.string() << "\n";
}

struct TrainArgs {
  std::string atlas, config = "paper", out, mask_source = "mask", init;
  int epochs = 25, batch = 64, threads = 0;
  std::uint64_t seed = 1;
  double lr = 1e-3;
  std::size_t samples_per_epoch = 0, val_samples = 0;
  bool quiet = false;
};

svox::Atlas load_atlas(const fs::path& dir, const std::string& mask_source, RunManifest& m) {
  auto read = [&](const std::string& stem) {
    const fs::path p = dir / volume_name(stem);
    m.input(p);
    return svox::read_volume(p);
  };
  svox::Atlas a{read("echo1"), read("echo2"), read("ct"), svox::Mask()};
  if (mask_source == "mask") {
    const fs::path p = dir / volume_name("mask");
    m.input(p);
    a.mask = svox::read_mask(p);
  } else if (mask_source == "echo1") {
    a.mask = svox::compute_headmask(a.echo1);
  } else if (mask_source == "echo2") {
    a.mask = svox::compute_headmask(a.echo2);
  } else if (mask_source == "ct") {
    a.mask = svox::compute_headmask(a.ct);
  } else {
    throw svox::Error("cli", "unknown --mask-source '" + mask_source + "'");
  }
  a.validate();
  return a;
}

void cmd_train(const TrainArgs& a, RunManifest& m) {
  svox::ModelConfig cfg = resolve_config(a.config);
  if (a.config != "paper" && a.config != "tiny") m.input(a.config);
  cfg.seed = a.seed;
  if (!a.init.empty()) cfg.init_scheme = a.init;
  cfg.validate();
  svox::TrainPlan plan;
  plan.epochs = a.epochs;
  plan.batch_size = a.batch;
  plan.seed = a.seed;
  plan.lr = a.lr;
  plan.samples_per_epoch = a.samples_per_epoch;
  plan.val_samples = a.val_samples;
  plan.threads = svox::resolve_threads(a.threads);
  plan.verbose = !a.quiet;
  plan.validate();

  auto t0 = Clock::now();
  const svox::Atlas atlas = load_atlas(a.atlas, a.mask_source, m);
  m.time("load", t0);
  for (std::size_t i = 0; i < svox::kAllOrientations.size(); ++i)
    m.seeds[std::string(svox::to_string(svox::kAllOrientations[i]))] = {{"model", cfg.seed + i}, {"plan", plan.seed + i}};
  t0 = Clock::now();
  const auto paths = svox::train_all_orientations(atlas, cfg, plan, a.out);
  m.time("train", t0);
  for (const auto& p : paths) m.outputs.push_back(p.string());
  write_text(fs::path(a.out) / "config.json", json(cfg).dump(2) + "\n");
  m.write(fs::path(a.out) / "manifest_train.json");
  std::cout << "config " << cfg.name << " parameters " << svox::config_param_count(cfg) << "\n";
  std::cout << "wrote " << paths.size() << " models to " << a.out << "\n";
}

struct PredictArgs {
  std::string models, echo1, echo2, out;
  int threads = 0;
};

void cmd_predict(const PredictArgs& a, RunManifest& m) {
  const fs::path dir(a.models);
  for (auto t : svox::kAllOrientations)
    if (fs::exists(dir / svox::model_filename(t))) m.input(dir / svox::model_filename(t));
  auto t0 = Clock::now();
  const svox::Ensemble e = svox::Ensemble::load(dir);
  m.input(a.echo1);
  m.input(a.echo2);
  const svox::Volume e1 = svox::read_volume(a.echo1), e2 = svox::read_volume(a.echo2);
  m.time("load", t0);
  t0 = Clock::now();
  const svox::Volume ct = svox::predict_ensemble(e, e1, e2, svox::resolve_threads(a.threads));
  m.time("predict", t0);
  svox::write_volume(ct, a.out);
  m.outputs.push_back(a.out);
  m.write(a.out + ".manifest.json");
  std::cout << "wrote " << a.out << "\n";
}

struct EvaluateArgs {
  std::string ref, test, mask, out;
};

void cmd_evaluate(const EvaluateArgs& a, RunManifest& m) {
  for (const auto& p : {a.ref, a.test, a.mask}) m.input(p);
  const svox::Volume ref = svox::read_volume(a.ref), test = svox::read_volume(a.test);
  const svox::Mask mask = svox::read_mask(a.mask);
  const auto t0 = Clock::now();
  const svox::EvalReport r = svox::evaluate(ref, test, mask, fs::path(a.mask).filename().string());
  m.time("evaluate", t0);
  write_text(a.out, svox::to_json_string(r));
  m.outputs.push_back(a.out);
  m.write(a.out + ".manifest.json");
  std::cout << svox::format_comparison_table({"cnn"}, {fs::path(a.test).stem().string()}, {{r}});
}

void print_error(const std::string& module, const std::string& message) {
  std::cerr << json{{"error", {{"module", module}, {"message", message}}}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"svox: patch-based CT synthesis from dual-echo UTE volumes"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(svox::kVersion));

  PhantomArgs pa;
  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic UTE/CT phantom corpus");
  phantom->add_option("--out", pa.out, "Output directory")->required();
  phantom->add_option("--seed", pa.seed, "Seed of subject 0; subject i uses seed+i")->capture_default_str();
  phantom->add_option("--count", pa.count, "Number of subjects")->capture_default_str()->check(CLI::Range(2, 1000));
  phantom->add_option("--dims", pa.dims, "Volume dims X,Y,Z")->capture_default_str();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train the three orientation models on an atlas");
  train->add_option("--atlas", ta.atlas, "Atlas directory with echo1/echo2/ct/mask.svox")
      ->required()
      ->check(CLI::ExistingDirectory);
  train->add_option("--config", ta.config, "paper, tiny, or a JSON config file")->capture_default_str();
  train->add_option("--epochs", ta.epochs, "Training epochs")->capture_default_str();
  train->add_option("--batch", ta.batch, "Mini-batch size")->capture_default_str();
  train->add_option("--seed", ta.seed, "Model and sampling seed; orientation i uses seed+i")->capture_default_str();
  train->add_option("--out", ta.out, "Output directory for models and histories")->required();
  train->add_option("--threads", ta.threads, "Worker threads (0: SVOX_THREADS or all cores)")->capture_default_str();
  train->add_option("--lr", ta.lr, "Adam learning rate")->capture_default_str();
  train->add_option("--samples-per-epoch", ta.samples_per_epoch, "Training patches per epoch (0: all)")
      ->capture_default_str();
  train->add_option("--val-samples", ta.val_samples, "Validation patches (0: all)")->capture_default_str();
  train->add_option("--mask-source", ta.mask_source, "mask file, or Otsu headmask of echo1, echo2 or ct")
      ->capture_default_str()
      ->check(CLI::IsMember({"mask", "echo1", "echo2", "ct"}));
  train->add_option("--init", ta.init, "Override the config's init scheme (gaussian or he)")
      ->check(CLI::IsMember({"gaussian", "he"}));
  train->add_flag("--quiet", ta.quiet, "Suppress per-epoch log lines");

  PredictArgs pr;
  auto* predict = app.add_subcommand("predict", "Synthesize CT with the orientation ensemble");
  predict->add_option("--models", pr.models, "Directory holding the three model files")->required();
  predict->add_option("--echo1", pr.echo1, "First-echo volume")->required();
  predict->add_option("--echo2", pr.echo2, "Second-echo volume")->required();
  predict->add_option("--out", pr.out, "Output CT volume (.svox or .nii)")->required();
  predict->add_option("--threads", pr.threads, "Worker threads (0: SVOX_THREADS or all cores)")->capture_default_str();

  EvaluateArgs ea;
  auto* evaluate = app.add_subcommand("evaluate", "PSNR and correlation inside a mask");
  evaluate->add_option("--ref", ea.ref, "Reference CT volume")->required();
  evaluate->add_option("--test", ea.test, "Synthetic CT volume")->required();
  evaluate->add_option("--mask", ea.mask, "Evaluation mask volume")->required();
  evaluate->add_option("--out", ea.out, "EvalReport JSON path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    print_error("cli", e.what());
    return 2;
  }

  RunManifest m;
  m.arguments.assign(argv + 1, argv + argc);
  try {
    if (phantom->parsed()) {
      m.command = "phantom";
      cmd_phantom(pa, m);
    } else if (train->parsed()) {
      m.command = "train";
      cmd_train(ta, m);
    } else if (predict->parsed()) {
      m.command = "predict";
      cmd_predict(pr, m);
    } else {
      m.command = "evaluate";
      cmd_evaluate(ea, m);
    }
  } catch (const svox::Error& e) {
    print_error(e.module(), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("cli", e.what());
    return 1;
  }
  return 0;
}
