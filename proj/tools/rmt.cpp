// rmt: generate synthetic tasks, pretrain the surrogate, tune binary masks and
// inspect mask artifacts.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "rmt/binary_io.hpp"
#include "rmt/config.hpp"
#include "rmt/errors.hpp"
#include "rmt/masking.hpp"
#include "rmt/model.hpp"
#include "rmt/training.hpp"

namespace fs = std::filesystem;
using namespace rmt;

namespace {

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::string out;
  bool verbose = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_file, "config file of `key = value` lines");
  cmd->add_option("-s,--set", c.sets, "override a config key (key=value), repeatable");
  cmd->add_option("-o,--out", c.out, "output directory (default: $RMT_OUT or ./rmt_out)");
  cmd->add_flag("-v,--verbose", c.verbose, "progress on stderr");
}

Config resolve(const Common& c, const std::vector<std::pair<std::string, std::string>>& flags) {
  Config cfg;
  if (!c.config_file.empty()) cfg.load_file(c.config_file);
  for (const auto& s : c.sets) cfg.set_assignment(s);
  for (const auto& [k, v] : flags) cfg.set(k, v);
  return cfg;
}

fs::path output_dir(const Common& c) {
  fs::path dir = c.out;
  if (dir.empty()) {
    const char* env = std::getenv("RMT_OUT");
    dir = env && *env ? env : "rmt_out";
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error("cannot create output directory " + dir.string());
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

void echo_config(const fs::path& dir, const Config& cfg) { write_text(dir / "config.txt", cfg.to_text()); }

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

// Task directory written by `gen`.
struct Manifest {
  std::map<std::string, std::string> kv;

  static Manifest load(const fs::path& dir) {
    std::ifstream in(dir / "manifest.txt");
    if (!in) throw Error("missing manifest.txt in " + dir.string());
    Manifest m;
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find(" = ");
      if (line.empty() || line[0] == '#' || eq == std::string::npos) continue;
      m.kv[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return m;
  }
  const std::string& at(const std::string& key) const {
    auto it = kv.find(key);
    if (it == kv.end()) throw Error("manifest is missing '" + key + "'");
    return it->second;
  }
  std::size_t size(const std::string& key) const { return std::stoull(at(key)); }
};

FewShotTask load_task(const fs::path& dir) {
  const Manifest m = Manifest::load(dir);
  const std::size_t seq_len = m.size("seq_len");
  FewShotTask task;
  task.shots = m.size("shots");
  task.class_ids = split_ints(m.at("class_ids"));
  task.train = load_token_file((dir / "train.rmtf").string(), seq_len);
  task.test = load_token_file((dir / "test.rmtf").string(), seq_len);
  task.base_labels = split_ints(m.kv.count("base_labels") ? m.at("base_labels") : "");
  task.new_labels = split_ints(m.kv.count("new_labels") ? m.at("new_labels") : "");
  return task;
}

struct TaskSource {
  std::string dir;
  std::string feature_train;
  std::string feature_test;

  void add(CLI::App* cmd) {
    cmd->add_option("-t,--task", dir, "task directory written by `gen`");
    cmd->add_option("--feature-train", feature_train, "RMTF file of precomputed training features");
    cmd->add_option("--feature-test", feature_test, "RMTF file of precomputed test features");
  }
  FewShotTask load() const {
    if (!feature_train.empty() || !feature_test.empty()) {
      if (feature_train.empty() || feature_test.empty()) throw ConfigError("--feature-train and --feature-test go together");
      return load_feature_task(feature_train, feature_test);
    }
    if (dir.empty()) throw ConfigError("a task is required: --task DIR or --feature-train/--feature-test");
    return load_task(dir);
  }
};

std::string eval_record(const EvalResult& r) {
  std::string s = "accuracy=" + format_number(r.accuracy);
  if (r.harmonic) {
    s += " base=" + format_number(*r.base_accuracy) + " new=" + format_number(*r.new_accuracy) +
         " harmonic=" + format_number(*r.harmonic);
  }
  s += "\n";
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    s += "class=" + std::to_string(c) + " accuracy=" + format_number(r.per_class[c]) + "\n";
  }
  return s;
}

std::string sparsity_table(const MaskArtifact& a) {
  std::size_t w = 5;
  for (const auto& l : a.layers) w = std::max(w, l.name.size());
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof(buf), "%-*s  %10s  %10s  %9s\n", static_cast<int>(w), "layer", "bits", "zeros", "sparsity");
  out += buf;
  for (const auto& l : a.layers) {
    const double sp = l.bit_count ? 100.0 * static_cast<double>(l.zero_count()) / static_cast<double>(l.bit_count) : 0.0;
    std::snprintf(buf, sizeof(buf), "%-*s  %10llu  %10llu  %8.4f%%\n", static_cast<int>(w), l.name.c_str(),
                  static_cast<unsigned long long>(l.bit_count), static_cast<unsigned long long>(l.zero_count()), sp);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "%-*s  %10llu  %10llu  %8.4f%%\n", static_cast<int>(w), "total",
                static_cast<unsigned long long>(a.total_bits()), static_cast<unsigned long long>(a.total_zeros()),
                a.total_bits() ? sparsity(a) : 0.0);
  out += buf;
  return out;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Binary mask tuning over a frozen dual encoder"};
  app.require_subcommand(1);

  // gen
  Common gen_c;
  std::optional<std::uint64_t> gen_seed;
  std::optional<std::size_t> gen_classes, gen_shots;
  auto* gen = app.add_subcommand("gen", "generate a synthetic base task and a shifted few-shot task");
  add_common(gen, gen_c);
  gen->add_option("--seed", gen_seed, "generator seed")->required();
  gen->add_option("--classes", gen_classes, "downstream class count");
  gen->add_option("--shots", gen_shots, "training samples per class");

  // pretrain
  Common pre_c;
  std::string pre_task;
  auto* pre = app.add_subcommand("pretrain", "train the surrogate encoder on the base task");
  add_common(pre, pre_c);
  pre->add_option("-t,--task", pre_task, "task directory written by `gen`")->required();

  // tune
  Common tune_c;
  TaskSource tune_src;
  std::string tune_ckpt;
  std::optional<std::string> policy;
  bool regularized = false, diagnostics = false;
  std::optional<double> leak, lr_scale;
  std::optional<std::uint64_t> tune_seed;
  std::optional<std::size_t> epochs;
  auto* tune = app.add_subcommand("tune", "learn binary masks on the few-shot task");
  add_common(tune, tune_c);
  tune_src.add(tune);
  tune->add_option("-k,--checkpoint", tune_ckpt, "surrogate checkpoint")->required();
  tune->add_option("--policy", policy, "amt, mmt, pmt or dmt");
  tune->add_flag("--regularized", regularized, "enable gradient dropout regularity");
  tune->add_option("--leak", leak, "leak parameter l in [0, 1]");
  tune->add_option("--seed", tune_seed, "run seed");
  tune->add_option("--epochs", epochs, "training epochs");
  tune->add_option("--lr-scale", lr_scale, "multiplier on the base learning rate");
  tune->add_flag("--diagnostics", diagnostics, "write per-step gate diagnostics");

  // eval
  Common eval_c;
  TaskSource eval_src;
  std::string eval_ckpt, eval_artifact;
  auto* ev = app.add_subcommand("eval", "accuracy of the surrogate, optionally under a mask artifact");
  add_common(ev, eval_c);
  eval_src.add(ev);
  ev->add_option("-k,--checkpoint", eval_ckpt, "surrogate checkpoint")->required();
  ev->add_option("-a,--artifact", eval_artifact, "mask artifact (default: no masks)");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "mask and gradient analyses");
  analyze->require_subcommand(1);
  Common delta_c;
  TaskSource delta_src;
  std::string delta_ckpt;
  auto* delta = analyze->add_subcommand("delta", "per-layer mask-gradient delta over one warmup epoch");
  add_common(delta, delta_c);
  delta_src.add(delta);
  delta->add_option("-k,--checkpoint", delta_ckpt, "surrogate checkpoint")->required();
  Common sp_c;
  std::string sp_artifact;
  auto* sp = analyze->add_subcommand("sparsity", "per-layer and total sparsity of an artifact");
  add_common(sp, sp_c);
  sp->add_option("artifact", sp_artifact, "mask artifact")->required();
  Common iou_c;
  std::string iou_a, iou_b;
  auto* iou = analyze->add_subcommand("iou", "IoU of the zero positions of two artifacts");
  add_common(iou, iou_c);
  iou->add_option("a", iou_a, "first artifact")->required();
  iou->add_option("b", iou_b, "second artifact")->required();

  // pack / unpack
  std::string pack_in, pack_out, unpack_in, unpack_out;
  auto* pack = app.add_subcommand("pack", "text mask listing to a packed artifact");
  pack->add_option("input", pack_in, "text listing")->required();
  pack->add_option("output", pack_out, "artifact to write")->required();
  auto* unpack = app.add_subcommand("unpack", "packed artifact to a text listing");
  unpack->add_option("input", unpack_in, "artifact")->required();
  unpack->add_option("output", unpack_out, "text file to write (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*gen) {
      std::vector<std::pair<std::string, std::string>> flags{{"gen.seed", std::to_string(*gen_seed)}};
      if (gen_classes) flags.emplace_back("gen.classes", std::to_string(*gen_classes));
      if (gen_shots) flags.emplace_back("gen.shots", std::to_string(*gen_shots));
      const Config cfg = resolve(gen_c, flags);
      const SyntheticConfig sc = synthetic_config(cfg);
      const fs::path dir = output_dir(gen_c);
      const SyntheticData data = generate_synthetic_task(sc);
      write_rmtf((dir / "base.rmtf").string(), data.base, sc.base_classes);
      write_rmtf((dir / "train.rmtf").string(), data.task.train, data.task.classes());
      write_rmtf((dir / "test.rmtf").string(), data.task.test, data.task.classes());
      std::string manifest = "# rmt task manifest\n";
      manifest += "seed = " + std::to_string(sc.seed) + "\n";
      manifest += "base_classes = " + std::to_string(sc.base_classes) + "\n";
      manifest += "classes = " + std::to_string(data.task.classes()) + "\n";
      manifest += "shots = " + std::to_string(data.task.shots) + "\n";
      manifest += "width = " + std::to_string(sc.width) + "\n";
      manifest += "seq_len = " + std::to_string(sc.seq_len) + "\n";
      manifest += "class_ids = " + join(data.task.class_ids) + "\n";
      manifest += "base_labels = " + join(data.task.base_labels) + "\n";
      manifest += "new_labels = " + join(data.task.new_labels) + "\n";
      manifest += "base_samples = " + std::to_string(data.base.size()) + "\n";
      manifest += "train_samples = " + std::to_string(data.task.train.size()) + "\n";
      manifest += "test_samples = " + std::to_string(data.task.test.size()) + "\n";
      write_text(dir / "manifest.txt", manifest);
      echo_config(dir, cfg);
      std::cout << "wrote task to " << dir.string() << "\n";
      return 0;
    }

    if (*pre) {
      const Config cfg = resolve(pre_c, {});
      const Manifest m = Manifest::load(pre_task);
      PretrainConfig pc = pretrain_config(cfg);
      pc.model.input_width = m.size("width");
      pc.model.classes = m.size("base_classes");
      const LabeledTokens base = load_token_file((fs::path(pre_task) / "base.rmtf").string(), m.size("seq_len"));
      const fs::path dir = output_dir(pre_c);
      PretrainReport rep;
      const DualEncoder model = pretrain_surrogate(base, pc, &rep);
      save_checkpoint(model, (dir / "checkpoint.rmtw").string());
      std::string metrics;
      for (std::size_t e = 0; e < rep.epoch_loss.size(); ++e) {
        metrics += "epoch=" + std::to_string(e + 1) + " ce_loss=" + format_number(rep.epoch_loss[e]) + "\n";
        if (pre_c.verbose) std::cerr << "epoch " << e + 1 << " loss " << rep.epoch_loss[e] << "\n";
      }
      metrics += "summary train_accuracy=" + format_number(rep.train_accuracy) + " tau=" + format_number(rep.tau) + "\n";
      write_text(dir / "pretrain_metrics.txt", metrics);
      echo_config(dir, cfg);
      std::cout << "train_accuracy=" << format_number(rep.train_accuracy) << " tau=" << format_number(rep.tau) << "\n";
      return 0;
    }

    if (*tune) {
      std::vector<std::pair<std::string, std::string>> flags;
      if (policy) flags.emplace_back("run.policy", *policy);
      if (regularized) flags.emplace_back("run.regularized", "true");
      if (leak) flags.emplace_back("run.leak", format_number(*leak));
      if (tune_seed) flags.emplace_back("run.seed", std::to_string(*tune_seed));
      if (epochs) flags.emplace_back("run.epochs", std::to_string(*epochs));
      if (lr_scale) flags.emplace_back("run.lr_scale", format_number(*lr_scale));
      const Config cfg = resolve(tune_c, flags);
      const RunConfig rc = run_config(cfg);
      const FewShotTask task = tune_src.load();
      const DualEncoder model = load_checkpoint(tune_ckpt);
      const fs::path dir = output_dir(tune_c);
      std::ofstream diag;
      TuneHooks hooks;
      if (diagnostics) {
        diag.open(dir / "diagnostics.txt");
        if (!diag) throw Error("cannot write diagnostics file");
        hooks.diagnostics = &diag;
      }
      if (tune_c.verbose) {
        hooks.on_step = [](const StepInfo& s, const DualEncoder&) {
          std::cerr << "step " << s.step << " epoch " << s.epoch << " ce " << s.ce_loss << " kl " << s.kl_loss << "\n";
        };
      }
      const TuneResult res = run_mask_tuning(model, task, rc, hooks);
      save_mask_artifact(res.report.artifact, (dir / "masks.rmtm").string());
      write_text(dir / "metrics.txt", res.report.metrics_text());
      echo_config(dir, cfg);
      if (res.report.projection_only) std::cout << "note: feature task, masking applies to the projection head only\n";
      std::cout << "zero_shot=" << format_number(res.report.zero_shot_accuracy)
                << " accuracy=" << format_number(res.report.final_eval.accuracy)
                << " sparsity=" << format_number(res.report.final_sparsity) << " seconds=" << res.report.wall_seconds
                << "\n";
      return 0;
    }

    if (*ev) {
      const Config cfg = resolve(eval_c, {});
      const FewShotTask task = eval_src.load();
      const DualEncoder frozen = load_checkpoint(eval_ckpt);
      const DualEncoder model = eval_artifact.empty() ? with_mask_settings(frozen, {})
                                                      : apply_artifact(frozen, load_mask_artifact(eval_artifact));
      const fs::path dir = output_dir(eval_c);
      const std::string record = eval_record(evaluate(model, task));
      write_text(dir / "eval.txt", record);
      echo_config(dir, cfg);
      std::cout << record.substr(0, record.find('\n') + 1);
      return 0;
    }

    if (*delta) {
      const Config cfg = resolve(delta_c, {});
      const RunConfig rc = run_config(cfg);
      const FewShotTask task = delta_src.load();
      const DualEncoder model = load_checkpoint(delta_ckpt);
      const DeltaReport rep = delta_report(model, task, rc);
      const fs::path dir = output_dir(delta_c);
      std::string record;
      for (const auto& l : rep.layers) {
        record += "layer=" + l.name + " type=" + std::string(to_string(l.kind)) + " delta=" + format_number(l.delta) +
                  " signed_delta=" + format_number(l.signed_delta) + "\n";
      }
      record += "summary mhsa_mean=" + format_number(rep.attention_mean) + " mlp_mean=" + format_number(rep.mlp_mean) +
                " projection=" + format_number(rep.projection) + " steps=" + std::to_string(rep.steps) + "\n";
      write_text(dir / "delta.txt", record);
      echo_config(dir, cfg);
      std::cout << rep.table();
      return 0;
    }

    if (*sp) {
      const MaskArtifact a = load_mask_artifact(sp_artifact);
      const fs::path dir = output_dir(sp_c);
      std::string record;
      for (const auto& l : a.layers) {
        record += "layer=" + l.name + " bits=" + std::to_string(l.bit_count) + " zeros=" + std::to_string(l.zero_count()) + "\n";
      }
      record += "total bits=" + std::to_string(a.total_bits()) + " zeros=" + std::to_string(a.total_zeros()) +
                " sparsity=" + format_number(a.total_bits() ? sparsity(a) : 0.0) + "\n";
      write_text(dir / "sparsity.txt", record);
      std::cout << sparsity_table(a);
      return 0;
    }

    if (*iou) {
      const double v = mask_iou(load_mask_artifact(iou_a), load_mask_artifact(iou_b));
      const fs::path dir = output_dir(iou_c);
      write_text(dir / "iou.txt", "iou=" + format_number(v) + "\n");
      char buf[64];
      std::snprintf(buf, sizeof(buf), "iou %.3f\n", v);
      std::cout << buf;
      return 0;
    }

    if (*pack) {
      save_mask_artifact(mask_artifact_from_text(read_text(pack_in)), pack_out);
      return 0;
    }

    if (*unpack) {
      const std::string text = mask_artifact_to_text(load_mask_artifact(unpack_in));
      if (unpack_out.empty()) {
        std::cout << text;
      } else {
        write_text(unpack_out, text);
      }
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
