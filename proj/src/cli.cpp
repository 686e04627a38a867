#include "mobillm/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mobillm/cost_model.hpp"
#include "mobillm/device.hpp"
#include "mobillm/gradcheck.hpp"
#include "mobillm/rng.hpp"
#include "mobillm/server.hpp"

namespace mobillm {

namespace {

struct BackboneFlags {
  std::uint32_t vocab = 16;
  std::uint32_t hidden = 32;
  std::uint32_t layers = 4;
  std::uint32_t heads = 4;
  std::uint32_t ffn = 128;
  std::uint32_t max_seq = 0;  // 0: the sequence length
  std::string cuts = "uniform:4";
  bool tap_embedding = true;
};

struct DeviceFlags {
  BackboneFlags backbone;
  std::string server = "127.0.0.1:7070";
  std::string scheme = "nf4";
  std::uint32_t batch = 16;
  std::uint32_t seq = 256;
  std::uint32_t epochs = 20;
  std::uint32_t samples = 1024;
  std::uint32_t iterations = 0;
  std::string weights;
  std::uint64_t seed = 0;
  std::string task = "synth";
  std::uint32_t queue = 4;
  std::string log;
  std::uint16_t classes = 2;
  bool serial = false;
  std::string fetch_checkpoint;
  std::uint32_t timeout_ms = 120000;
};

struct ServerFlags {
  std::string listen = ":7070";
  std::uint32_t bottleneck = 16;
  std::string activation = "gelu";
  double std = 0.02;
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  std::string loss = "ce";
  std::string ckpt;
  std::string metrics;
  std::uint32_t queue = 4;
  std::uint32_t snapshot_every = 0;
  std::uint16_t expect_gamma = 0;
  std::uint32_t timeout_ms = 300000;
};

struct EstimateFlags {
  std::string preset = "opt1.3b";
  std::string mode = "mobillm";
  std::string scheme = "fp16";
  double params = 0;
  std::uint64_t layers = 0;
  std::uint64_t hidden = 0;
  std::uint64_t heads = 0;
  std::uint64_t seq = 256;
  std::uint64_t batch = 16;
  std::uint64_t dtype_bytes = 2;
  std::uint64_t gamma = 0;
  std::uint64_t bottleneck = 16;
  double opt_bytes = 8;
  double rate_bps = 0;
  double t_fwd = 0;
  double t_server = 0;
};

struct GradcheckFlags {
  std::uint32_t seeds = 5;
  double step = 1e-6;
  double tol = 1e-5;
};

struct QuantbenchFlags {
  std::uint32_t n = 65536;
  std::uint64_t seed = 0;
  std::uint32_t batch = 16;
  std::uint32_t seq = 256;
  std::uint32_t hidden = 1024;
};

struct Cli {
  CLI::App app{"Server-assisted side-tuning: frozen backbone on the device, side network on the server.",
               "mobillm"};
  DeviceFlags device;
  ServerFlags server;
  DeviceFlags local_device;
  ServerFlags local_server;
  EstimateFlags estimate;
  GradcheckFlags gradcheck;
  QuantbenchFlags quantbench;
  std::map<std::string, CLI::Option*> estimate_opts;
  std::string config_path;
};

// Lines "key=value" (or "--key=value"); blank lines and '#' comments are
// skipped.
std::vector<std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::vector<std::string> flags;
  std::string line;
  std::size_t number = 0;
  auto trim = [](std::string t) {
    const auto b = t.find_first_not_of(" \t\r");
    const auto e = t.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : t.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++number;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(number) + ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    while (!key.empty() && key.front() == '-') key.erase(0, 1);
    flags.push_back("--" + key + "=" + trim(line.substr(eq + 1)));
  }
  return flags;
}

// Moves --config PATH out of `args` and splices the file's flags in right
// after the subcommand name, so later command-line flags override them.
std::vector<std::string> expand_config(const CLI::App& app, std::vector<std::string> args) {
  std::optional<std::string> path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + 2));
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (!path) return args;
  auto sub = std::find_if(args.begin(), args.end(), [&](const std::string& a) {
    try {
      (void)app.get_subcommand(a);
      return true;
    } catch (const CLI::OptionNotFound&) {
      return false;
    }
  });
  if (sub == args.end()) throw ConfigError("--config needs a subcommand");
  const auto flags = read_config_file(*path);
  args.insert(sub + 1, flags.begin(), flags.end());
  return args;
}

void add_backbone_flags(CLI::App& sub, BackboneFlags& f) {
  sub.add_option("--vocab", f.vocab, "Backbone vocabulary size");
  sub.add_option("--hidden", f.hidden, "Backbone hidden size H");
  sub.add_option("--layers", f.layers, "Backbone transformer layers L");
  sub.add_option("--heads", f.heads, "Attention heads");
  sub.add_option("--ffn", f.ffn, "Feed-forward width");
  sub.add_option("--max-seq", f.max_seq, "Backbone context length (0: --seq)");
  sub.add_option("--cuts", f.cuts, "Block grouping: uniform:M or ascending cut list");
  sub.add_option("--tap-embedding", f.tap_embedding, "Send the embedding output as the first tap");
}

void add_device_flags(CLI::App& sub, DeviceFlags& f, bool networked) {
  if (networked) sub.add_option("--server", f.server, "Server address HOST:PORT");
  sub.add_option("--scheme", f.scheme, "Activation quantization: fp16, fp8, fp4 or nf4");
  sub.add_option("--batch", f.batch, "Mini-batch size B");
  sub.add_option("--seq", f.seq, "Sequence length S");
  sub.add_option("--epochs", f.epochs, "Passes over the dataset");
  sub.add_option("--samples", f.samples, "Synthetic samples per epoch");
  sub.add_option("--iterations", f.iterations, "Stop after this many batches (0: epochs)");
  add_backbone_flags(sub, f.backbone);
  sub.add_option("--weights", f.weights, "Backbone weight file (empty: initialize from --seed)");
  sub.add_option("--task", f.task, "Dataset: synth or csv:PATH");
  sub.add_option("--queue", f.queue, "Send queue depth");
  sub.add_option("--log", f.log, "Device JSONL log path");
  sub.add_option("--classes", f.classes, "Output classes");
  sub.add_flag("--serial", f.serial, "Wait for the server after every batch instead of overlapping")
      ->option_text("[off]");
  sub.add_option("--fetch-checkpoint", f.fetch_checkpoint,
                 "Fetch the trained side network before Bye and save it here");
  if (networked) sub.add_option("--timeout-ms", f.timeout_ms, "Reply timeout in milliseconds");
}

void add_server_flags(CLI::App& sub, ServerFlags& f, bool networked) {
  if (networked) sub.add_option("--listen", f.listen, "Listen address [HOST]:PORT");
  sub.add_option("--bottleneck", f.bottleneck, "Adapter bottleneck m");
  sub.add_option("--activation", f.activation, "Adapter nonlinearity: gelu or relu");
  sub.add_option("--std", f.std, "Adapter init standard deviation");
  sub.add_option("--lr", f.lr, "Adam learning rate");
  sub.add_option("--beta1", f.beta1, "Adam beta1");
  sub.add_option("--beta2", f.beta2, "Adam beta2");
  sub.add_option("--eps", f.eps, "Adam epsilon");
  if (networked) sub.add_option("--seed", f.seed, "Side network init seed");
  sub.add_option("--loss", f.loss, "Loss: ce or mse");
  sub.add_option("--ckpt", f.ckpt, "Side network checkpoint written at the end");
  sub.add_option("--metrics", f.metrics, "Metrics JSONL path");
  if (networked) {
    sub.add_option("--inbound-queue", f.queue, "Inbound queue depth");
    sub.add_option("--snapshot-every", f.snapshot_every, "Send MetricsSnapshot every N iterations (0: off)");
    sub.add_option("--expect-gamma", f.expect_gamma, "Reject devices announcing another tap count (0: any)");
    sub.add_option("--timeout-ms", f.timeout_ms, "Idle timeout in milliseconds");
  }
}

std::unique_ptr<Cli> build_cli() {
  auto cli = std::make_unique<Cli>();
  CLI::App& app = cli->app;
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1, 1);

  auto* device = app.add_subcommand("device", "Run the device side and stream activations to a server");
  add_device_flags(*device, cli->device, true);
  device->add_option("--seed", cli->device.seed, "Backbone and dataset seed");

  auto* server = app.add_subcommand("server", "Serve one device session and train the side network");
  add_server_flags(*server, cli->server, true);

  auto* local = app.add_subcommand("local", "Device and server pipelines in one process");
  add_device_flags(*local, cli->local_device, false);
  add_server_flags(*local, cli->local_server, false);
  local->add_option("--seed", cli->local_device.seed, "Backbone, dataset and side network seed");

  auto* grad = app.add_subcommand("gradcheck", "Compare side network gradients with finite differences");
  grad->add_option("--seeds", cli->gradcheck.seeds, "Number of random tiny configs");
  grad->add_option("--step", cli->gradcheck.step, "Central difference step");
  grad->add_option("--tol", cli->gradcheck.tol, "Maximum accepted relative error");

  auto* est = app.add_subcommand("estimate", "Print memory, payload and timing estimates as JSON");
  auto& e = cli->estimate;
  auto& o = cli->estimate_opts;
  est->add_option("--preset", e.preset, "opt350m, opt1.3b or custom");
  est->add_option("--mode", e.mode, "full_ft, side_local, mobillm or inference");
  est->add_option("--scheme", e.scheme, "Payload quantization: fp16, fp8, fp4 or nf4");
  o["params"] = est->add_option("--params", e.params, "Parameter count P");
  o["layers"] = est->add_option("--layers", e.layers, "Layers L");
  o["hidden"] = est->add_option("--hidden", e.hidden, "Hidden size H");
  o["heads"] = est->add_option("--heads", e.heads, "Attention heads");
  o["seq"] = est->add_option("--seq", e.seq, "Sequence length S");
  o["batch"] = est->add_option("--batch", e.batch, "Batch size B");
  o["dtype"] = est->add_option("--dtype-bytes", e.dtype_bytes, "Bytes per weight/activation (2 or 4)");
  o["gamma"] = est->add_option("--gamma", e.gamma, "Taps per iteration");
  o["bottleneck"] = est->add_option("--bottleneck", e.bottleneck, "Side adapter bottleneck m");
  o["opt"] = est->add_option("--opt-bytes", e.opt_bytes, "Optimizer bytes per trainable parameter");
  est->add_option("--rate-bps", e.rate_bps, "Uplink rate for the time estimate (0: skip)");
  est->add_option("--t-fwd", e.t_fwd, "Device forward seconds per batch");
  est->add_option("--t-server", e.t_server, "Server seconds per iteration");

  auto* qb = app.add_subcommand("quantbench", "Round-trip error and payload size per scheme");
  qb->add_option("--n", cli->quantbench.n, "Gaussian samples for the error measurement");
  qb->add_option("--seed", cli->quantbench.seed, "Sample seed");
  qb->add_option("--batch", cli->quantbench.batch, "Payload shape B");
  qb->add_option("--seq", cli->quantbench.seq, "Payload shape S");
  qb->add_option("--hidden", cli->quantbench.hidden, "Payload shape H");

  // Only registered so --help lists it; run_cli expands the file before
  // parsing.
  for (CLI::App* sub : {device, server, local, grad, est, qb}) {
    sub->add_option("--config", cli->config_path,
                    "key=value file; command-line flags take precedence");
    // Make empty-string defaults visible in --help.
    for (CLI::Option* opt : sub->get_options()) {
      if (opt->get_expected_min() > 0 && opt->get_default_str().empty()) opt->default_str("\"\"");
    }
  }
  return cli;
}

QuantScheme scheme_flag(const std::string& text) {
  auto s = parse_scheme(text);
  if (!s) throw ConfigError("unknown scheme '" + text + "'");
  return *s;
}

DeviceConfig device_config(const DeviceFlags& f) {
  DeviceConfig c;
  BackboneConfig& b = c.backbone;
  b.vocab_size = f.backbone.vocab;
  b.hidden = f.backbone.hidden;
  b.layers = f.backbone.layers;
  b.heads = f.backbone.heads;
  b.ffn_dim = f.backbone.ffn;
  b.max_seq = f.backbone.max_seq ? f.backbone.max_seq : f.seq;
  b.block_cuts = parse_cuts(f.backbone.cuts, f.backbone.layers);
  b.tap_embedding = f.backbone.tap_embedding;
  b.validate();
  c.weights_path = f.weights;
  c.seed = f.seed;
  c.scheme = scheme_flag(f.scheme);
  c.batch = f.batch;
  c.seq = f.seq;
  c.epochs = f.epochs;
  c.samples = f.samples;
  c.max_iterations = f.iterations;
  c.queue_depth = f.queue;
  c.task = f.task;
  c.log_path = f.log;
  c.classes = f.classes;
  c.pipelined = !f.serial;
  c.fetch_checkpoint = !f.fetch_checkpoint.empty();
  c.reply_timeout = Millis(f.timeout_ms);
  if (c.queue_depth == 0) throw ConfigError("--queue must be at least 1");
  if (c.batch == 0 || c.seq == 0) throw ConfigError("--batch and --seq must be positive");
  return c;
}

ServerConfig server_config(const ServerFlags& f) {
  ServerConfig c;
  c.listen = f.listen;
  c.bottleneck = f.bottleneck;
  auto act = parse_activation(f.activation);
  if (!act) throw ConfigError("unknown activation '" + f.activation + "'");
  c.activation = *act;
  c.init_std = f.std;
  c.seed = f.seed;
  c.adam = {f.lr, f.beta1, f.beta2, f.eps};
  auto loss = parse_loss(f.loss);
  if (!loss) throw ConfigError("unknown loss '" + f.loss + "'");
  c.loss = *loss;
  c.checkpoint_path = f.ckpt;
  c.metrics_path = f.metrics;
  c.queue_depth = f.queue;
  c.snapshot_every = f.snapshot_every;
  if (f.expect_gamma) c.policy.expected_gamma = f.expect_gamma;
  c.idle_timeout = Millis(f.timeout_ms);
  if (c.queue_depth == 0) throw ConfigError("--inbound-queue must be at least 1");
  if (!(c.init_std >= 0)) throw ConfigError("--std must be non-negative");
  if (!(c.adam.lr >= 0)) throw ConfigError("--lr must be non-negative");
  return c;
}

nlohmann::json summary(const ServerReport& s, const DeviceReport& d) {
  nlohmann::json j = {{"iterations", s.iterations},
                      {"protocol_errors", s.protocol_errors},
                      {"act_batch_bytes", s.act_batch_bytes},
                      {"device_wall_s", d.wall_s}};
  if (!s.metrics.empty()) {
    j["final_loss"] = s.metrics.back().loss;
    j["final_acc"] = s.metrics.back().accuracy;
  }
  return j;
}

int cmd_device(const Cli& cli, std::ostream& out) {
  const DeviceConfig config = device_config(cli.device);
  const auto [host, port] = parse_endpoint(cli.device.server);
  auto transport = TcpTransport::connect(host, port, config.handshake_timeout);
  const DeviceReport report = run_device(config, *transport);
  if (report.checkpoint) save_checkpoint(cli.device.fetch_checkpoint, *report.checkpoint);
  nlohmann::json j = {{"iterations", report.iterations},
                      {"bytes_sent", report.bytes_sent},
                      {"act_batch_bytes", report.act_batch_bytes},
                      {"wall_s", report.wall_s},
                      {"max_queued_bytes", report.max_queued_bytes}};
  if (!report.snapshots.empty()) {
    j["last_loss"] = report.snapshots.back().last_loss;
    j["last_acc"] = report.snapshots.back().last_accuracy;
  }
  out << j.dump() << "\n";
  return kExitOk;
}

int cmd_server(const Cli& cli, std::ostream& out) {
  const ServerConfig config = server_config(cli.server);
  const ServerReport report = run_server(config, [&](std::uint16_t port) {
    out << "listening on port " << port << std::endl;
  });
  out << summary(report, {}).dump() << "\n";
  return report.reset_reason.empty() ? kExitOk : kExitRuntime;
}

int cmd_local(const Cli& cli, std::ostream& out) {
  const DeviceConfig device = device_config(cli.local_device);
  ServerFlags sf = cli.local_server;
  sf.seed = cli.local_device.seed;
  const LocalReport report = local_mode(device, server_config(sf));
  if (report.device.checkpoint) save_checkpoint(cli.local_device.fetch_checkpoint, *report.device.checkpoint);
  nlohmann::json j = summary(report.server, report.device);
  // Final parameters over one epoch of the training data.
  if (report.server.final_params && sf.loss == "ce") {
    j["train_acc"] = evaluate_accuracy(device_backbone(device), *report.server.final_params,
                                       *device_dataset(device), device.scheme);
  }
  out << j.dump() << "\n";
  return kExitOk;
}

int cmd_gradcheck(const Cli& cli, std::ostream& out) {
  GradcheckConfig config;
  config.step = cli.gradcheck.step;
  std::vector<std::uint64_t> seeds;
  for (std::uint32_t i = 1; i <= cli.gradcheck.seeds; ++i) seeds.push_back(i);
  double worst = 0.0;
  for (const auto& r : gradcheck_suite(config, seeds)) {
    out << "seed " << r.seed << ": " << r.coordinates << " coordinates, max rel err "
        << std::scientific << std::setprecision(3) << r.max_rel_error << " (" << r.worst_tensor
        << ")\n";
    worst = std::max(worst, r.max_rel_error);
  }
  out << "max rel err " << std::scientific << std::setprecision(3) << worst << "\n";
  return worst < cli.gradcheck.tol ? kExitOk : kExitRuntime;
}

int cmd_estimate(const Cli& cli, std::ostream& out) {
  const EstimateFlags& e = cli.estimate;
  ModelSpec spec;
  if (e.preset != "custom") {
    auto preset = model_preset(e.preset);
    if (!preset) throw ConfigError("unknown preset '" + e.preset + "'");
    spec = *preset;
  }
  const auto& o = cli.estimate_opts;
  const bool custom = e.preset == "custom";
  auto given = [&](const char* key) { return custom || o.at(key)->count() > 0; };
  if (given("params")) spec.params = e.params;
  if (given("layers")) spec.layers = e.layers;
  if (given("hidden")) spec.hidden = e.hidden;
  if (given("heads")) spec.heads = e.heads;
  if (given("seq")) spec.seq = e.seq;
  if (given("batch")) spec.batch = e.batch;
  if (given("dtype")) spec.dtype_bytes = e.dtype_bytes;
  if (given("gamma")) spec.gamma = e.gamma;
  if (given("bottleneck")) spec.side_bottleneck = e.bottleneck;
  if (given("opt")) spec.optimizer_bytes_per_param = e.opt_bytes;
  auto mode = parse_memory_mode(e.mode);
  if (!mode) throw ConfigError("unknown mode '" + e.mode + "'");
  const QuantScheme scheme = scheme_flag(e.scheme);

  CostReport report = device_memory_estimate(spec, *mode);
  report.payload_bytes_per_iter = payload_per_iteration(spec, scheme);
  if (e.rate_bps > 0) {
    report.est_iter_time_s =
        iteration_time_estimate(e.t_fwd, report.payload_bytes_per_iter, e.rate_bps, e.t_server);
  }
  nlohmann::json j = to_json(report);
  j["preset"] = spec.name;
  j["mode"] = to_string(*mode);
  j["scheme"] = to_string(scheme);
  out << j.dump(2) << "\n";
  return kExitOk;
}

int cmd_quantbench(const Cli& cli, std::ostream& out) {
  const QuantbenchFlags& q = cli.quantbench;
  if (q.n == 0) throw ConfigError("--n must be positive");
  Rng rng(q.seed);
  const TensorF x = rng.gaussian_tensor<float>({q.n}, 0.0, 1.0);
  const Shape payload_shape{q.batch, q.seq, q.hidden};
  for (auto scheme : {QuantScheme::none_fp16, QuantScheme::fp8_e4m3, QuantScheme::fp4_grid, QuantScheme::nf4}) {
    const TensorF y = dequantize(quantize(x, scheme));
    double sq = 0.0, max_abs = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = static_cast<double>(y[i]) - static_cast<double>(x[i]);
      sq += d * d;
      max_abs = std::max(max_abs, std::abs(d));
    }
    out << nlohmann::json{{"scheme", to_string(scheme)},
                          {"rmse", std::sqrt(sq / static_cast<double>(x.size()))},
                          {"max_abs_err", max_abs},
                          {"payload_bytes", payload_bytes(payload_shape, scheme)}}
               .dump()
        << "\n";
  }
  return kExitOk;
}

}  // namespace

std::vector<std::uint32_t> parse_cuts(const std::string& text, std::uint32_t layers) {
  constexpr std::string_view kUniform = "uniform:";
  if (text.rfind(kUniform, 0) == 0) {
    std::uint32_t blocks = 0;
    try {
      std::size_t used = 0;
      blocks = static_cast<std::uint32_t>(std::stoul(text.substr(kUniform.size()), &used));
      if (used != text.size() - kUniform.size()) throw std::invalid_argument(text);
    } catch (const std::logic_error&) {
      throw ConfigError("bad --cuts '" + text + "'");
    }
    return uniform_cuts(layers, blocks);
  }
  std::vector<std::uint32_t> cuts;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      cuts.push_back(static_cast<std::uint32_t>(std::stoul(item, &used)));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError("bad --cuts '" + text + "'");
    }
  }
  if (cuts.empty()) throw ConfigError("--cuts is empty");
  return cuts;
}

std::vector<std::string> options_without_defaults() {
  auto cli = build_cli();
  std::vector<std::string> missing;
  for (const CLI::App* sub : cli->app.get_subcommands([](const CLI::App*) { return true; })) {
    for (const CLI::Option* opt : sub->get_options()) {
      if (opt->get_name() == "--help") continue;
      const bool shown = opt->get_expected_min() > 0 ? !opt->get_default_str().empty()
                                                     : !opt->get_option_text().empty();
      if (!shown) {
        missing.push_back(sub->get_name() + " " + opt->get_name());
      }
    }
  }
  return missing;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  auto cli = build_cli();
  try {
    std::vector<std::string> expanded;
    try {
      expanded = expand_config(cli->app, args);
    } catch (const ConfigError& e) {
      err << "config error: " << e.what() << "\n";
      return kExitConfig;
    }
    std::vector<std::string> reversed(expanded.rbegin(), expanded.rend());
    cli->app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << cli->app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << cli->app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* sub = nullptr;
    for (const CLI::App* s : cli->app.get_subcommands()) sub = s;
    err << (sub ? sub->help(cli->app.get_name()) : cli->app.help());
    return kExitConfig;
  }

  const CLI::App* chosen = cli->app.get_subcommands().front();
  const std::string name = chosen->get_name();
  try {
    if (name == "device") return cmd_device(*cli, out);
    if (name == "server") return cmd_server(*cli, out);
    if (name == "local") return cmd_local(*cli, out);
    if (name == "gradcheck") return cmd_gradcheck(*cli, out);
    if (name == "estimate") return cmd_estimate(*cli, out);
    return cmd_quantbench(*cli, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const HandshakeError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const Error& e) {
    err << to_string(e.kind()) << " error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace mobillm
