// Command-line entry point wiring phantom generation, training, inference,
// evaluation, gradient checking and the experiment harnesses into
// reproducible runs. Every run echoes its effective configuration into the
// output directory before doing anything else.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "nlunet/checkpoint.hpp"
#include "nlunet/gradcheck_suite.hpp"
#include "nlunet/metrics.hpp"
#include "nlunet/phantom.hpp"
#include "nlunet/trainer.hpp"

namespace fs = std::filesystem;
using namespace nlunet;

namespace {

// Flat key=value store: defaults, then config file, then --set overrides,
// then explicit flags. Unknown keys are rejected against the subcommand's
// registry.
class KvConfig {
 public:
  void set_default(const std::string& key, const std::string& value) {
    known_.insert(key);
    values_[key] = value;
  }

  void load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");
    std::string line;
    while (std::getline(f, line)) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config file '" + path + "': expected key=value, got '" + line + "'");
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  void apply_overrides(const std::vector<std::string>& pairs) {
    for (const std::string& kv : pairs) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos)
        throw ConfigError("--set expects key=value, got '" + kv + "'");
      set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
  }

  void set(const std::string& key, const std::string& value) {
    if (!known_.count(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = value;
  }

  const std::string& str(const std::string& key) const { return values_.at(key); }

  int64_t integer(const std::string& key) const {
    try {
      size_t pos = 0;
      const int64_t v = std::stoll(values_.at(key), &pos);
      if (pos != values_.at(key).size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' expects an integer, got '" + values_.at(key) +
                        "'");
    }
  }

  double real(const std::string& key) const {
    try {
      size_t pos = 0;
      const double v = std::stod(values_.at(key), &pos);
      if (pos != values_.at(key).size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' expects a number, got '" + values_.at(key) +
                        "'");
    }
  }

  std::vector<int64_t> integer_list(const std::string& key) const {
    std::vector<int64_t> out;
    std::istringstream ss(values_.at(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        out.push_back(std::stoll(item));
      } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' expects comma-separated integers, got '" +
                          values_.at(key) + "'");
      }
    }
    if (out.empty())
      throw ConfigError("config key '" + key + "' expects at least one value");
    return out;
  }

  // Write the effective configuration, sorted by key.
  void echo(const std::string& dir) const {
    fs::create_directories(dir);
    std::ofstream f(dir + "/config.txt");
    if (!f) throw DataError("cannot write '" + dir + "/config.txt'");
    for (const auto& [k, v] : values_) f << k << " = " << v << "\n";
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
  std::set<std::string> known_;
};

std::string default_out_dir(uint64_t seed) {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  char buf[64];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", std::localtime(&tt));
  return std::string("runs/") + buf + "-seed" + std::to_string(seed);
}

// Common per-subcommand plumbing: --config/--set/--seed/--out.
struct RunArgs {
  std::string config_file;
  std::vector<std::string> overrides;
  uint64_t seed = 0;
  std::string out_dir;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "flat key=value config file");
    app->add_option("--set", overrides, "override a config key (key=value, repeatable)");
    app->add_option("--seed", seed, "random seed");
    app->add_option("--out", out_dir, "output directory (default runs/<timestamp>-seed<seed>)");
  }

  std::string resolve_out() const { return out_dir.empty() ? default_out_dir(seed) : out_dir; }

  void finalize(KvConfig& kv) const {
    if (!config_file.empty()) kv.load_file(config_file);
    kv.apply_overrides(overrides);
  }
};

Dims3 parse_dims(const std::string& s) {
  Dims3 d{};
  char x1, x2;
  std::istringstream ss(s);
  if (!(ss >> d[0] >> x1 >> d[1] >> x2 >> d[2]) || x1 != 'x' || x2 != 'x' || !ss.eof())
    throw ConfigError("dims expects DxHxW (e.g. 64x64x64), got '" + s + "'");
  return d;
}

std::vector<int> parse_classes(const std::string& s) {
  std::vector<int> out;
  std::istringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  if (out.empty()) throw ConfigError("classes expects a comma-separated list");
  return out;
}

TrainConfig train_config_from(const KvConfig& kv, uint64_t seed, const std::string& out_dir) {
  TrainConfig cfg;
  cfg.model = kv.str("model");
  cfg.base_width = kv.integer("base_width");
  cfg.batch_size = kv.integer("batch_size");
  cfg.patch_size = kv.integer("patch_size");
  cfg.steps = kv.integer("steps");
  cfg.seed = seed;
  cfg.lr = kv.real("lr");
  cfg.weight_decay = kv.real("weight_decay");
  cfg.dropout = kv.real("dropout");
  cfg.log_every = kv.integer("log_every");
  cfg.checkpoint_every = kv.integer("checkpoint_every");
  cfg.val_every = kv.integer("val_every");
  cfg.val_overlap_step = kv.integer("val_overlap_step");
  cfg.out_dir = out_dir;
  return cfg;
}

void add_train_keys(KvConfig& kv) {
  kv.set_default("model", "full");
  kv.set_default("base_width", "32");
  kv.set_default("batch_size", "5");
  kv.set_default("patch_size", "32");
  kv.set_default("steps", "1000");
  kv.set_default("lr", "0.001");
  kv.set_default("weight_decay", "2e-6");
  kv.set_default("dropout", "0.5");
  kv.set_default("log_every", "10");
  kv.set_default("checkpoint_every", "0");
  kv.set_default("val_every", "0");
  kv.set_default("val_overlap_step", "16");
}

// Load data/labels when paths are set, otherwise generate phantoms from the
// seed (train) and seed+1 (validation).
struct Dataset {
  Volume train_vol;
  LabelVolume train_labels;
  Volume val_vol;
  LabelVolume val_labels;
};

Dataset load_dataset(const KvConfig& kv, uint64_t seed) {
  Dataset ds;
  const Dims3 dims = parse_dims(kv.str("dims"));
  if (kv.str("data").empty()) {
    std::tie(ds.train_vol, ds.train_labels) = generate_phantom(seed, dims);
    std::tie(ds.val_vol, ds.val_labels) = generate_phantom(seed + 1, dims);
  } else {
    ds.train_vol = read_volume(kv.str("data"));
    ds.train_labels = read_labels(kv.str("labels"));
    if (!kv.str("val_data").empty()) {
      ds.val_vol = read_volume(kv.str("val_data"));
      ds.val_labels = read_labels(kv.str("val_labels"));
    } else {
      std::tie(ds.val_vol, ds.val_labels) = generate_phantom(seed + 1, ds.train_vol.dims);
    }
  }
  return ds;
}

void add_data_keys(KvConfig& kv) {
  kv.set_default("data", "");
  kv.set_default("labels", "");
  kv.set_default("val_data", "");
  kv.set_default("val_labels", "");
  kv.set_default("dims", "64x64x64");
}

int run_gen_data(const RunArgs& args, KvConfig& kv) {
  args.finalize(kv);
  const std::string out = args.resolve_out();
  kv.echo(out);
  const Dims3 dims = parse_dims(kv.str("dims"));
  auto [vol, labels] = generate_phantom(args.seed, dims, 4, kv.real("noise_level"));
  const std::string prefix = out + "/" + kv.str("prefix");
  write_volume(vol, prefix + ".vol");
  write_labels(labels, prefix + ".labels");
  std::cout << "wrote " << prefix << ".vol and " << prefix << ".labels (dims "
            << dims_str(dims) << ")\n";
  return 0;
}

int run_train(const RunArgs& args, KvConfig& kv) {
  args.finalize(kv);
  const std::string out = args.resolve_out();
  kv.echo(out);
  Dataset ds = load_dataset(kv, args.seed);
  TrainConfig cfg = train_config_from(kv, args.seed, out);
  const bool with_val = cfg.val_every > 0;
  TrainResult r = train(cfg, ds.train_vol, ds.train_labels, with_val ? &ds.val_vol : nullptr,
                        with_val ? &ds.val_labels : nullptr);
  std::printf("trained %s for %lld steps: loss %.6g -> %.6g\n", cfg.model.c_str(),
              static_cast<long long>(cfg.steps), r.initial_loss, r.final_loss);
  std::cout << "checkpoint: " << r.checkpoint_path << "\nloss log: " << r.log_path << "\n";
  return 0;
}

int run_infer(const RunArgs& args, KvConfig& kv) {
  args.finalize(kv);
  const std::string out = args.resolve_out();
  kv.echo(out);
  if (kv.str("checkpoint").empty()) throw ConfigError("infer: checkpoint is required");
  if (kv.str("data").empty()) throw ConfigError("infer: data is required");
  Network<float> net = load_checkpoint(kv.str("checkpoint"));
  Volume vol = read_volume(kv.str("data"));
  PatchSpec spec{kv.integer("patch_size"), kv.integer("overlap_step")};
  InferResult r = infer(net, vol, spec, static_cast<int>(kv.integer("threads")));
  write_volume(r.probabilities, out + "/probabilities.vol");
  write_labels(r.labels, out + "/prediction.labels");
  std::cout << "wrote " << out << "/probabilities.vol and " << out << "/prediction.labels\n";
  return 0;
}

int run_eval(const RunArgs& args, KvConfig& kv) {
  args.finalize(kv);
  const std::string out = args.resolve_out();
  kv.echo(out);
  if (kv.str("pred").empty() || kv.str("truth").empty())
    throw ConfigError("eval: pred and truth are required");
  LabelVolume pred = read_labels(kv.str("pred"));
  LabelVolume truth = read_labels(kv.str("truth"));
  SegmentationReport report = evaluate(pred, truth, parse_classes(kv.str("classes")));
  const std::string text = report_to_text(report);
  std::ofstream f(out + "/report.txt");
  f << text;
  std::cout << text;
  return 0;
}

int run_gradcheck(const RunArgs& args, KvConfig& kv) {
  args.finalize(kv);
  const std::string out = args.resolve_out();
  kv.echo(out);
  const auto results =
      run_gradcheck_suite(args.seed, static_cast<int>(kv.integer("seeds_per_op")));
  bool all_pass = true;
  for (const auto& r : results) {
    std::printf("%-26s %12.3e  (tol %.0e)  %s\n", r.name.c_str(), r.max_rel_err, r.tolerance,
                r.pass() ? "ok" : "FAIL");
    all_pass = all_pass && r.pass();
  }
  if (!all_pass) {
    std::cerr << "error: numeric: gradient check failed\n";
    return 4;
  }
  return 0;
}

int run_params(const RunArgs& args, KvConfig& kv) {
  args.finalize(kv);
  NetworkConfig base;
  base.base_width = kv.integer("base_width");
  NetworkConfig cfg = make_ablation(kv.str("model"), base);
  Network<float> net = build_network<float>(cfg, args.seed);
  std::cout << count_parameters(net) << "\n";
  return 0;
}

int run_ablate(const RunArgs& args, KvConfig& kv) {
  args.finalize(kv);
  const std::string out = args.resolve_out();
  kv.echo(out);
  Dataset ds = load_dataset(kv, args.seed);
  const std::vector<int> class_ids = {1, 2, 3};
  const std::vector<std::string> variants = {"1", "2", "3", "4", "5", "full"};

  std::ofstream dice_table(out + "/ablation_dice.tsv");
  std::ofstream mhd_table(out + "/ablation_mhd3d.tsv");
  dice_table << "model\tdice_class1\tdice_class2\tdice_class3\tdice_average\n";
  mhd_table << "model\tmhd3d_class1\tmhd3d_class2\tmhd3d_class3\tmhd3d_average\n";
  std::printf("%-8s %10s %10s %10s %10s\n", "model", "DR c1", "DR c2", "DR c3", "DR avg");
  for (const std::string& variant : variants) {
    TrainConfig cfg = train_config_from(kv, args.seed, out + "/model" + variant);
    cfg.model = variant;
    train(cfg, ds.train_vol, ds.train_labels);
    Network<float> net = load_checkpoint(cfg.out_dir + "/checkpoint.json");
    InferResult r = infer(net, ds.val_vol, {cfg.patch_size, cfg.val_overlap_step});
    SegmentationReport rep = evaluate(r.labels, ds.val_labels, class_ids);
    dice_table << variant;
    mhd_table << variant;
    char buf[32];
    for (const ClassMetrics& cm : rep.classes) {
      std::snprintf(buf, sizeof buf, "\t%.6g", cm.dice);
      dice_table << buf;
      std::snprintf(buf, sizeof buf, "\t%.6g", cm.mhd3d);
      mhd_table << buf;
    }
    std::snprintf(buf, sizeof buf, "\t%.6g", rep.average_dice);
    dice_table << buf << "\n";
    std::snprintf(buf, sizeof buf, "\t%.6g", rep.average_mhd3d);
    mhd_table << buf << "\n";
    std::printf("%-8s %10.4f %10.4f %10.4f %10.4f\n", variant.c_str(), rep.classes[0].dice,
                rep.classes[1].dice, rep.classes[2].dice, rep.average_dice);
  }
  std::cout << "tables: " << out << "/ablation_dice.tsv, " << out << "/ablation_mhd3d.tsv\n";
  return 0;
}

int run_sweep(const RunArgs& args, KvConfig& kv) {
  args.finalize(kv);
  const std::string out = args.resolve_out();
  kv.echo(out);
  const std::string axis = kv.str("axis");
  const std::vector<int64_t> values = kv.integer_list("values");
  const std::vector<int> class_ids = {1, 2, 3};
  Dataset ds = load_dataset(kv, args.seed);
  TrainConfig cfg = train_config_from(kv, args.seed, out + "/train");

  std::vector<SweepRow> rows;
  if (axis == "overlap") {
    train(cfg, ds.train_vol, ds.train_labels);
    Network<float> net = load_checkpoint(cfg.out_dir + "/checkpoint.json");
    rows = sweep_overlap(net, ds.val_vol, ds.val_labels, values, cfg.patch_size, class_ids);
  } else if (axis == "patch_size") {
    rows = sweep_patch_size(cfg, ds.train_vol, ds.train_labels, ds.val_vol, ds.val_labels, values,
                            class_ids);
  } else {
    throw ConfigError("sweep: axis must be 'overlap' or 'patch_size', got '" + axis + "'");
  }
  const std::string table = out + "/sweep_" + axis + ".tsv";
  const std::string plot = out + "/sweep_" + axis + ".dat";
  write_sweep_table(rows, class_ids, table, plot);
  for (const SweepRow& row : rows) {
    if (row.ok)
      std::printf("%-6lld patches %6lld  avg DR %.4f\n", static_cast<long long>(row.value),
                  static_cast<long long>(row.patch_count), row.report.average_dice);
    else
      std::printf("%-6lld failed: %s\n", static_cast<long long>(row.value), row.error.c_str());
  }
  std::cout << "table: " << table << "\nplot data: " << plot << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"non-local U-Net: volumetric segmentation experiments"};
  app.require_subcommand(1);

  RunArgs args[8];
  KvConfig kvs[8];
  int which = -1;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic phantom volume");
  args[0].attach(gen);
  kvs[0].set_default("dims", "64x64x64");
  kvs[0].set_default("noise_level", "0.05");
  kvs[0].set_default("prefix", "phantom");
  gen->callback([&] { which = 0; });

  auto* tr = app.add_subcommand("train", "train a model on a volume or phantom");
  args[1].attach(tr);
  add_train_keys(kvs[1]);
  add_data_keys(kvs[1]);
  tr->callback([&] { which = 1; });

  auto* inf = app.add_subcommand("infer", "sliding-window inference with a checkpoint");
  args[2].attach(inf);
  kvs[2].set_default("checkpoint", "");
  kvs[2].set_default("data", "");
  kvs[2].set_default("patch_size", "32");
  kvs[2].set_default("overlap_step", "8");
  kvs[2].set_default("threads", "1");
  inf->callback([&] { which = 2; });

  auto* ev = app.add_subcommand("eval", "compare predicted labels against ground truth");
  args[3].attach(ev);
  kvs[3].set_default("pred", "");
  kvs[3].set_default("truth", "");
  kvs[3].set_default("classes", "1,2,3");
  ev->callback([&] { which = 3; });

  auto* gc = app.add_subcommand("gradcheck", "finite-difference checks for every op");
  args[4].attach(gc);
  kvs[4].set_default("seeds_per_op", "20");
  gc->callback([&] { which = 4; });

  auto* ab = app.add_subcommand("ablate", "train and compare the model variant ladder");
  args[5].attach(ab);
  add_train_keys(kvs[5]);
  add_data_keys(kvs[5]);
  kvs[5].set("steps", "200");
  kvs[5].set("base_width", "8");
  kvs[5].set("patch_size", "16");
  ab->callback([&] { which = 5; });

  auto* sw = app.add_subcommand("sweep", "overlap-step or patch-size sweep");
  args[6].attach(sw);
  add_train_keys(kvs[6]);
  add_data_keys(kvs[6]);
  kvs[6].set_default("axis", "overlap");
  kvs[6].set_default("values", "4,8,16,32");
  kvs[6].set("steps", "200");
  kvs[6].set("base_width", "8");
  kvs[6].set("patch_size", "16");
  sw->callback([&] { which = 6; });

  auto* pa = app.add_subcommand("params", "print the trainable parameter count");
  args[7].attach(pa);
  std::string params_model = "full";
  int64_t params_width = 32;
  pa->add_option("--model", params_model, "variant id: 1..5 or full");
  pa->add_option("--base-width", params_width, "channels after the input block");
  kvs[7].set_default("model", "full");
  kvs[7].set_default("base_width", "32");
  pa->callback([&] { which = 7; });

  try {
    app.parse(argc, argv);
    switch (which) {
      case 0: return run_gen_data(args[0], kvs[0]);
      case 1: return run_train(args[1], kvs[1]);
      case 2: return run_infer(args[2], kvs[2]);
      case 3: return run_eval(args[3], kvs[3]);
      case 4: return run_gradcheck(args[4], kvs[4]);
      case 5: return run_ablate(args[5], kvs[5]);
      case 6: return run_sweep(args[6], kvs[6]);
      case 7:
        if (pa->count("--model")) kvs[7].set("model", params_model);
        if (pa->count("--base-width")) kvs[7].set("base_width", std::to_string(params_width));
        return run_params(args[7], kvs[7]);
    }
    return 0;
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const ConfigError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "error: numeric: " << e.what() << "\n";
    return 4;
  } catch (const DataError& e) {
    std::cerr << "error: data: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
}
