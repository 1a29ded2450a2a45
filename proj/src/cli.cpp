#include "doconv/cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "doconv/checks.hpp"
#include "doconv/doconv.hpp"
#include "doconv/model_io.hpp"
#include "doconv/net.hpp"
#include "doconv/train.hpp"

namespace doconv::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CliConfig {
  NetworkSpec network;
  TrainConfig train;
  std::string train_images, train_labels, test_images, test_labels;
  std::vector<std::uint64_t> seeds;
  std::string output_dir;
};

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed,
                         const std::string& context) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key \"" + key + "\" in " + context);
  }
}

ConvGeometry parse_geom(const json& j, std::size_t c_in, const std::string& context) {
  ConvGeometry g;
  g.c_in = c_in;
  g.c_out = j.at("out_channels").get<std::size_t>();
  const auto kernel = j.at("kernel");
  if (!kernel.is_array() || kernel.size() != 2) {
    throw ConfigError(context + ": \"kernel\" must be [m, n]");
  }
  g.m = kernel[0].get<std::size_t>();
  g.n = kernel[1].get<std::size_t>();
  g.stride = j.value("stride", 1);
  g.pad = j.value("pad", 0);
  g.groups = j.value("groups", 1);
  g.d_mul = j.value("d_mul", g.spatial());
  return g;
}

NetworkSpec parse_network(const json& j) {
  reject_unknown_keys(j, {"input", "layers"}, "\"network\"");
  NetworkSpec spec;
  const json& input = j.at("input");
  reject_unknown_keys(input, {"height", "width", "channels"}, "\"network.input\"");
  spec.in_h = input.at("height").get<std::size_t>();
  spec.in_w = input.at("width").get<std::size_t>();
  spec.in_c = input.value("channels", 1);

  std::size_t c = spec.in_c;
  for (const json& lj : j.at("layers")) {
    const std::string kind = lj.at("kind").get<std::string>();
    const std::string ctx = "layer \"" + kind + "\"";
    LayerSpec ls;
    if (kind == "conv" || kind == "doconv") {
      reject_unknown_keys(lj, {"kind", "out_channels", "kernel", "stride", "pad", "groups",
                               "d_mul", "bias", "d_init"},
                          ctx);
      ls.kind = kind == "conv" ? LayerKind::Conv : LayerKind::DoConv;
      ls.geom = parse_geom(lj, c, ctx);
      ls.bias = lj.value("bias", true);
      const std::string d_init = lj.value("d_init", "identity");
      if (d_init != "identity" && d_init != "random") {
        throw ConfigError(ctx + ": d_init must be \"identity\" or \"random\"");
      }
      ls.d_init = d_init == "random" ? DInit::Random : DInit::Identity;
      c = ls.geom.c_out;
    } else if (kind == "dodconv") {
      reject_unknown_keys(lj, {"kind", "depth_multiplier", "kernel", "stride", "pad", "d_mul",
                               "bias", "d_init"},
                          ctx);
      ls.kind = LayerKind::DoDConv;
      const std::size_t dw = lj.at("depth_multiplier").get<std::size_t>();
      json with_out = lj;
      with_out["out_channels"] = c * dw;
      ls.geom = parse_geom(with_out, c, ctx);
      ls.bias = lj.value("bias", true);
      const std::string d_init = lj.value("d_init", "identity");
      ls.d_init = d_init == "random" ? DInit::Random : DInit::Identity;
      c = ls.geom.c_out;
    } else if (kind == "relu") {
      reject_unknown_keys(lj, {"kind"}, ctx);
      ls.kind = LayerKind::Relu;
    } else if (kind == "maxpool") {
      reject_unknown_keys(lj, {"kind"}, ctx);
      ls.kind = LayerKind::MaxPool;
    } else if (kind == "flatten") {
      reject_unknown_keys(lj, {"kind"}, ctx);
      ls.kind = LayerKind::Flatten;
    } else if (kind == "dense") {
      reject_unknown_keys(lj, {"kind", "units", "bias"}, ctx);
      ls.kind = LayerKind::Dense;
      ls.units = lj.at("units").get<std::size_t>();
      ls.bias = lj.value("bias", true);
      c = ls.units;
    } else if (kind == "softmax_ce") {
      reject_unknown_keys(lj, {"kind"}, ctx);
      ls.kind = LayerKind::SoftmaxCE;
    } else {
      throw ConfigError("unknown layer kind \"" + kind + "\"");
    }
    spec.layers.push_back(ls);
  }
  return spec;
}

TrainConfig parse_train(const json& j) {
  reject_unknown_keys(j, {"learning_rate", "momentum", "weight_decay", "batch_size", "epochs",
                          "schedule", "mode", "freeze_d"},
                      "\"train\"");
  TrainConfig cfg;
  cfg.lr = j.value("learning_rate", cfg.lr);
  cfg.momentum = j.value("momentum", cfg.momentum);
  cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.freeze_d = j.value("freeze_d", false);
  const std::string schedule = j.value("schedule", "constant");
  if (schedule == "constant") {
    cfg.schedule = LrSchedule::Constant;
  } else if (schedule == "cosine") {
    cfg.schedule = LrSchedule::Cosine;
  } else {
    throw ConfigError("train.schedule must be \"constant\" or \"cosine\"");
  }
  const std::string mode = j.value("mode", "kernel");
  if (mode == "kernel") {
    cfg.mode = Composition::Kernel;
  } else if (mode == "feature") {
    cfg.mode = Composition::Feature;
  } else {
    throw ConfigError("train.mode must be \"kernel\" or \"feature\"");
  }
  if (cfg.batch_size == 0 || cfg.epochs == 0) {
    throw ConfigError("train.batch_size and train.epochs must be >= 1");
  }
  return cfg;
}

CliConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  reject_unknown_keys(j, {"network", "train", "data", "seeds", "output_dir"}, "config");

  CliConfig cfg;
  cfg.network = parse_network(j.at("network"));
  cfg.network.validate();
  cfg.train = j.contains("train") ? parse_train(j.at("train")) : TrainConfig{};

  const json& data = j.at("data");
  reject_unknown_keys(data, {"train_images", "train_labels", "test_images", "test_labels"},
                      "\"data\"");
  // Paths resolve relative to the config file before any work starts.
  const fs::path base = fs::path(path).parent_path();
  auto resolve = [&base](const std::string& p) {
    const fs::path fp(p);
    return fp.is_absolute() ? fp.string() : (base / fp).string();
  };
  cfg.train_images = resolve(data.at("train_images").get<std::string>());
  cfg.train_labels = resolve(data.at("train_labels").get<std::string>());
  cfg.test_images = resolve(data.at("test_images").get<std::string>());
  cfg.test_labels = resolve(data.at("test_labels").get<std::string>());

  cfg.seeds = j.value("seeds", std::vector<std::uint64_t>{1});
  if (cfg.seeds.empty()) throw ConfigError("\"seeds\" must list at least one seed");
  cfg.output_dir = resolve(j.value("output_dir", std::string(".")));
  return cfg;
}

json epoch_json(const TrainReport& report) {
  json epochs = json::array();
  for (std::size_t e = 0; e < report.epochs.size(); ++e) {
    epochs.push_back({{"epoch", e + 1},
                      {"train_loss", report.epochs[e].train_loss},
                      {"train_acc", report.epochs[e].train_acc},
                      {"test_acc", report.epochs[e].test_acc}});
  }
  return epochs;
}

int cmd_train(const std::string& config_path, const std::string& variant,
              std::int64_t seed_flag, std::ostream& out) {
  if (variant != "baseline" && variant != "doconv") {
    throw ConfigError("--variant must be baseline or doconv");
  }
  const CliConfig cfg = load_config(config_path);
  const NetworkSpec spec =
      variant == "doconv" ? cfg.network.doconv_variant() : cfg.network;

  const DatasetHandle train_data = load_idx(cfg.train_images, cfg.train_labels);
  const DatasetHandle test_data = load_idx(cfg.test_images, cfg.test_labels);
  fs::create_directories(cfg.output_dir);

  std::vector<std::uint64_t> seeds = cfg.seeds;
  if (seed_flag >= 0) seeds = {static_cast<std::uint64_t>(seed_flag)};

  double loss_sum = 0, acc_sum = 0;
  bool any_diverged = false;
  json all = json::array();
  for (const std::uint64_t seed : seeds) {
    Network net;
    const TrainReport report = train_run(spec, train_data, test_data, cfg.train, seed, &net);
    if (report.diverged) {
      any_diverged = true;
      throw NumericError("training diverged (non-finite loss) for seed " +
                         std::to_string(seed));
    }
    const std::string stem = "train-" + variant + "-seed" + std::to_string(seed);
    const std::string model_path = (fs::path(cfg.output_dir) / (stem + ".docv")).string();
    save_model(net, model_path, /*folded=*/false);

    json rj;
    rj["variant"] = variant;
    rj["seed"] = seed;
    rj["epochs"] = epoch_json(report);
    rj["final_train_loss"] = report.final_train_loss();
    rj["final_test_acc"] = report.final_test_acc();
    rj["steps"] = report.steps;
    rj["diverged"] = report.diverged;
    rj["model"] = model_path;
    rj["wall_seconds"] = report.wall_seconds;
    const std::string report_path = (fs::path(cfg.output_dir) / (stem + ".json")).string();
    std::ofstream rf(report_path);
    rf << rj.dump(2) << "\n";

    out << stem << ": final train loss " << report.final_train_loss() << ", test acc "
        << report.final_test_acc() << " (" << report.wall_seconds << " s)\n";
    loss_sum += report.final_train_loss();
    acc_sum += report.final_test_acc();
    all.push_back(rj);
  }

  if (seeds.size() > 1) {
    json summary;
    summary["variant"] = variant;
    summary["seeds"] = seeds;
    summary["mean_final_train_loss"] = loss_sum / double(seeds.size());
    summary["mean_final_test_acc"] = acc_sum / double(seeds.size());
    summary["runs"] = all;
    const std::string spath =
        (fs::path(cfg.output_dir) / ("train-" + variant + "-summary.json")).string();
    std::ofstream sf(spath);
    sf << summary.dump(2) << "\n";
    out << "mean final train loss " << loss_sum / double(seeds.size()) << ", mean test acc "
        << acc_sum / double(seeds.size()) << "\n";
  }
  return any_diverged ? 3 : 0;
}

int cmd_eval(const std::string& model_path, const std::vector<std::string>& data_paths,
             const std::string& json_path, std::ostream& out) {
  const Network net = load_model(model_path);
  const DatasetHandle data = load_idx(data_paths[0], data_paths[1]);
  const EvalStats stats = evaluate(net, data);
  json j;
  j["model"] = model_path;
  j["count"] = data.count();
  j["accuracy"] = stats.accuracy;
  j["mean_loss"] = stats.mean_loss;
  out << j.dump(2) << "\n";
  if (!json_path.empty()) {
    std::ofstream f(json_path);
    f << j.dump(2) << "\n";
  }
  return 0;
}

int cmd_fold(const std::string& in_path, const std::string& out_path, std::ostream& out) {
  const Network net = load_model(in_path);
  if (net.folded()) throw UnsupportedError("model is already folded");

  // Report how far training moved the composite kernel away from W, per layer
  // (comparable only when d_mul == m*n).
  double overall = 0;
  bool any = false;
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    const Layer& l = net.layers()[i];
    if (!l.has_d) continue;
    const FoldedKernel fk = fold_kernel(l.do_params());
    if (fk.w.shape() == l.w.shape()) {
      const double delta = max_abs_diff(fk.w, l.w);
      out << net.layer_label(i) << ": max |W' - W| = " << delta << "\n";
      overall = std::max(overall, delta);
      any = true;
    } else {
      out << net.layer_label(i) << ": folded " << fk.w.shape().str() << " (W is "
          << l.w.shape().str() << ", not comparable)\n";
    }
  }

  const Network folded = net.fold();
  save_model(folded, out_path, /*folded=*/true);
  if (any) out << "max |W' - W| = " << overall << "\n";
  out << "folded model written to " << out_path << "\n";
  return 0;
}

json macc_json(const MaccReport& r) {
  json steps = json::array();
  for (const auto& [desc, cost] : r.steps) steps.push_back({{"step", desc}, {"macc", cost}});
  return {{"mode", composition_name(r.mode)}, {"steps", steps}, {"total", r.total}};
}

int cmd_macc(const std::string& geom_str, const std::string& json_path, std::ostream& out) {
  std::vector<std::uint64_t> v;
  std::stringstream ss(geom_str);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      v.push_back(std::stoull(tok));
    } catch (const std::exception&) {
      throw ConfigError("--geom expects integers \"M,N,Cin,Cout,Dmul,H,W\"");
    }
  }
  if (v.size() != 7) throw ConfigError("--geom expects \"M,N,Cin,Cout,Dmul,H,W\"");
  ConvGeometry g;
  g.m = v[0];
  g.n = v[1];
  g.c_in = v[2];
  g.c_out = v[3];
  g.d_mul = v[4];
  const std::size_t h = v[5], w = v[6];

  const MaccReport feature = macc_estimate(g, Composition::Feature, h, w);
  const MaccReport kernel = macc_estimate(g, Composition::Kernel, h, w);
  const std::uint64_t folded = macc_folded_inference(g, h, w);

  for (const MaccReport& r : {feature, kernel}) {
    out << composition_name(r.mode) << " composition:\n";
    for (const auto& [desc, cost] : r.steps) {
      out << "  " << std::left << std::setw(14) << desc << " " << cost << "\n";
    }
    out << "  total          " << r.total << "\n";
  }
  out << "folded inference " << folded << " (same as a conventional convolution)\n";

  if (!json_path.empty()) {
    json j;
    j["geometry"] = {{"m", g.m},     {"n", g.n},         {"c_in", g.c_in}, {"c_out", g.c_out},
                     {"d_mul", g.d_mul}, {"h", h},       {"w", w}};
    j["feature"] = macc_json(feature);
    j["kernel"] = macc_json(kernel);
    j["folded_inference"] = folded;
    std::ofstream f(json_path);
    f << j.dump(2) << "\n";
  }
  return 0;
}

int cmd_delta(const std::string& model_path, std::size_t layer_index,
              const std::string& json_path, std::ostream& out) {
  const Network net = load_model(model_path);
  if (layer_index >= net.layers().size()) {
    throw UnsupportedError("layer index " + std::to_string(layer_index) + " out of range (" +
                           std::to_string(net.layers().size()) + " layers)");
  }
  const Layer& l = net.layers()[layer_index];
  if (!l.has_d) {
    throw UnsupportedError(net.layer_label(layer_index) +
                           " holds no unfolded DO-Conv parameters");
  }
  const Tensor h = kernel_delta(l.do_params());
  const std::size_t m = h.shape()[0], n = h.shape()[1];
  const double mx = h.max_abs();

  json j;
  j["layer"] = layer_index;
  j["m"] = m;
  j["n"] = n;
  j["max"] = mx;
  json rows = json::array();
  for (std::size_t r = 0; r < m; ++r) {
    json row = json::array();
    for (std::size_t c = 0; c < n; ++c) row.push_back(h.at(r, c));
    rows.push_back(row);
  }
  j["h"] = rows;
  out << j.dump(2) << "\n";

  // Normalized rendering; raw values live in the JSON above.
  out << "H (normalized to [0,1], max = " << mx << "):\n";
  out << std::fixed << std::setprecision(3);
  for (std::size_t r = 0; r < m; ++r) {
    out << " ";
    for (std::size_t c = 0; c < n; ++c) {
      out << " " << (mx > 0 ? h.at(r, c) / mx : 0.0);
    }
    out << "\n";
  }
  out.unsetf(std::ios::fixed);
  if (!json_path.empty()) {
    std::ofstream f(json_path);
    f << j.dump(2) << "\n";
  }
  return 0;
}

int cmd_check(std::size_t configs, std::size_t grad_seeds, std::ostream& out) {
  checks::CheckOptions opts;
  opts.equivalence_configs = configs;
  opts.grad_seeds = grad_seeds;
  const auto results = checks::run_property_suite(opts);
  bool all = true;
  for (const auto& r : results) {
    out << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << " (" << r.detail << ")\n";
    all = all && r.pass;
  }
  out << (all ? "all properties hold\n" : "property violations found\n");
  return all ? 0 : 3;
}

const char* error_kind(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const ShapeError*>(&e)) return "shape";
  if (dynamic_cast<const GeometryError*>(&e)) return "geometry";
  if (dynamic_cast<const UnsupportedError*>(&e)) return "unsupported";
  if (dynamic_cast<const NumericError*>(&e)) return "numeric";
  if (dynamic_cast<const IoError*>(&e)) return "io";
  return "internal";
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"depthwise over-parameterized convolution toolkit"};
  app.require_subcommand(1);

  std::string config_path, variant = "baseline";
  std::int64_t seed_flag = -1;
  CLI::App* train = app.add_subcommand("train", "train a model from a JSON config");
  train->add_option("--config", config_path, "config JSON")->required();
  train->add_option("--variant", variant, "baseline | doconv")->required();
  train->add_option("--seed", seed_flag, "single seed (default: every seed in the config)");

  std::string model_path, json_path;
  std::vector<std::string> data_paths;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a model on an IDX dataset");
  eval->add_option("--model", model_path, "model file (.docv)")->required();
  eval->add_option("--data", data_paths, "images.idx labels.idx")->expected(2)->required();
  eval->add_option("--json", json_path, "also write the JSON report here");

  std::string in_path, out_path;
  CLI::App* fold = app.add_subcommand("fold", "fold every DO layer into its composite kernel");
  fold->add_option("--in", in_path, "unfolded model")->required();
  fold->add_option("--out", out_path, "folded model destination")->required();

  std::string geom_str;
  CLI::App* macc = app.add_subcommand("macc", "composition cost comparison");
  macc->add_option("--geom", geom_str, "M,N,Cin,Cout,Dmul,H,W")->required();
  macc->add_option("--json", json_path, "also write the JSON report here");

  std::size_t layer_index = 0;
  CLI::App* delta = app.add_subcommand("delta", "fold-vs-raw kernel difference of one layer");
  delta->add_option("--model", model_path, "unfolded model file")->required();
  delta->add_option("--layer", layer_index, "layer index")->required();
  delta->add_option("--json", json_path, "also write the JSON report here");

  std::size_t check_configs = 200, check_grad_seeds = 20;
  CLI::App* check = app.add_subcommand("check", "run the full invariant suite");
  check->add_option("--configs", check_configs, "equivalence sweep size");
  check->add_option("--grad-seeds", check_grad_seeds, "gradient check seeds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "{\"error\":{\"kind\":\"usage\",\"message\":" << nlohmann::json(e.what()).dump()
        << "}}\n";
    return 2;
  }

  try {
    if (train->parsed()) return cmd_train(config_path, variant, seed_flag, out);
    if (eval->parsed()) return cmd_eval(model_path, data_paths, json_path, out);
    if (fold->parsed()) return cmd_fold(in_path, out_path, out);
    if (macc->parsed()) return cmd_macc(geom_str, json_path, out);
    if (delta->parsed()) return cmd_delta(model_path, layer_index, json_path, out);
    if (check->parsed()) return cmd_check(check_configs, check_grad_seeds, out);
  } catch (const ConfigError& e) {
    err << "{\"error\":{\"kind\":\"config\",\"message\":" << nlohmann::json(e.what()).dump()
        << "}}\n";
    return 2;
  } catch (const std::exception& e) {
    err << "{\"error\":{\"kind\":\"" << error_kind(e)
        << "\",\"message\":" << nlohmann::json(e.what()).dump() << "}}\n";
    return 3;
  }
  return 2;
}

}  // namespace doconv::cli
