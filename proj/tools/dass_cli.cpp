// Command-line front end: search, baseline, finetune, derive, eval,
// compare-features, sweep, report.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "CLI11.hpp"
#include "dass/error.hpp"
#include "dass/search.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace dass;

namespace {

struct ConfigFlags {
  std::string config_file;
  std::string preset = "default";
  std::optional<uint64_t> seed;
  std::optional<double> ratio;
  std::string data_dir;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& f) {
  cmd->add_option("--config", f.config_file, "Flat JSON config overlaid on the preset");
  cmd->add_option("--preset", f.preset, "Base preset: default or desk")->check(CLI::IsMember({"default", "desk"}));
  cmd->add_option("--seed", f.seed, "Override the seed");
  cmd->add_option("--ratio", f.ratio, "Override the pruning ratio");
  cmd->add_option("--data-dir", f.data_dir, "CIFAR-10 binary directory (overrides DASS_DATA_DIR)");
}

SearchConfig resolve_config(const ConfigFlags& f) {
  SearchConfig c = preset(f.preset);
  if (!f.config_file.empty()) {
    if (!fs::exists(f.config_file)) throw ConfigError("config file not found: " + f.config_file);
    c = load_config(f.config_file, c);
  }
  if (f.seed) c.seed = *f.seed;
  if (f.ratio) c.pruning_ratio = *f.ratio;
  if (!f.data_dir.empty()) c.data_dir = f.data_dir;
  if (c.dataset == DatasetKind::kCifar10Subset) c.data_dir = resolve_data_dir(c).string();
  c.validate();
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void log_phase(const SearchState& s, Phase completed) {
  const auto it = s.curves.find(to_string(completed));
  std::fprintf(stderr, "[%s] %s done", to_string(s.method), to_string(completed));
  if (it != s.curves.end() && !it->second.empty()) {
    std::fprintf(stderr, " (last train loss %.4f, val loss %.4f)", it->second.back().train_loss, it->second.back().val_loss);
  }
  std::fprintf(stderr, "\n");
}

void write_outputs(const RunResult& result, const fs::path& out) {
  write_text(out / "genotype.json", serialize(*result.state.genotype));
  write_text(out / "report.json", report_to_json(result.report));
  write_text(out / "loss_curves.csv", loss_curves_csv(result.report));
  std::printf("top1 %.2f%%  nonzero params %lld  compression %.2fx  nid %.3f\n", result.report.top1_accuracy,
              static_cast<long long>(result.report.params_nonzero), result.report.compression_rate, result.report.nid);
}

int run_search(const ConfigFlags& flags, const std::string& out_dir, const std::string& resume, Method method) {
  const SearchConfig cfg = resolve_config(flags);
  const fs::path out(out_dir);
  fs::create_directories(out);
  write_text(out / "config_resolved.json", config_to_json(cfg));
  const DataSplit data = load_data(cfg);
  RunOptions opts;
  opts.checkpoint_dir = out;
  opts.on_phase_end = [](SearchState& s, Phase p) { log_phase(s, p); };
  SearchState state;
  if (!resume.empty()) {
    state = load_checkpoint(resume, &cfg);
    if (state.method != method) throw ConfigError("checkpoint " + resume + " belongs to method " + to_string(state.method));
  } else {
    state = make_state(cfg, method, data.train.channels, data.train.num_classes);
  }
  write_outputs(run_pipeline(std::move(state), data, opts), out);
  return 0;
}

DataSplit data_for(SearchConfig cfg, const std::string& data_dir) {
  if (!data_dir.empty()) cfg.data_dir = data_dir;
  return load_data(cfg);
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError("not a number: '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentiable architecture search for sparse networks"};
  app.require_subcommand(1);

  ConfigFlags search_flags, baseline_flags, sweep_flags;
  std::string search_out = "runs/dass", baseline_out = "runs/baseline", sweep_out = "runs/sweep";
  std::string search_resume, baseline_resume;
  auto* search = app.add_subcommand("search", "Run the three-step DASS pipeline");
  add_config_flags(search, search_flags);
  search->add_option("--out", search_out, "Output directory");
  search->add_option("--resume", search_resume, "Continue from a phase checkpoint");
  auto* baseline = app.add_subcommand("baseline", "Run the dense-search-then-prune baseline");
  add_config_flags(baseline, baseline_flags);
  baseline->add_option("--out", baseline_out, "Output directory");
  baseline->add_option("--resume", baseline_resume, "Continue from a phase checkpoint");

  std::string ft_ckpt, ft_out = "runs/finetune", ft_data;
  std::optional<int> ft_epochs;
  auto* finetune = app.add_subcommand("finetune", "Fine-tune from a pruning checkpoint");
  finetune->add_option("--checkpoint", ft_ckpt, "ckpt_prune.bin of a search or baseline run")->required();
  finetune->add_option("--out", ft_out, "Output directory");
  finetune->add_option("--epochs", ft_epochs, "Override the fine-tune epoch count");
  finetune->add_option("--data-dir", ft_data, "CIFAR-10 binary directory");

  std::string derive_ckpt, derive_out = "genotype.json";
  auto* derive_cmd = app.add_subcommand("derive", "Extract the genotype from a checkpoint's architecture weights");
  derive_cmd->add_option("--checkpoint", derive_ckpt, "Checkpoint file")->required();
  derive_cmd->add_option("--out", derive_out, "Genotype output path");

  std::string eval_ckpt, eval_genotype, eval_split = "test", eval_data;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint's network on a data split");
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--genotype", eval_genotype, "Genotype to instantiate (defaults to the checkpoint's)");
  eval->add_option("--split", eval_split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--data-dir", eval_data, "CIFAR-10 binary directory");

  std::string cmp_a, cmp_b, cmp_out, cmp_data;
  auto* compare = app.add_subcommand("compare-features", "Per-cell Kendall tau between two checkpoints");
  compare->add_option("--a", cmp_a, "First checkpoint")->required();
  compare->add_option("--b", cmp_b, "Second checkpoint")->required();
  compare->add_option("--out", cmp_out, "CSV path (stdout if omitted)");
  compare->add_option("--data-dir", cmp_data, "CIFAR-10 binary directory");

  std::string sweep_ratios = "0.9,0.95,0.99", sweep_seeds = "1";
  auto* sweep = app.add_subcommand("sweep", "Paired DASS and baseline runs across pruning ratios");
  add_config_flags(sweep, sweep_flags);
  sweep->add_option("--ratios", sweep_ratios, "Comma-separated pruning ratios");
  sweep->add_option("--seeds", sweep_seeds, "Comma-separated seeds");
  sweep->add_option("--out", sweep_out, "Output directory");

  std::vector<std::string> report_files;
  bool report_csv = false;
  auto* report = app.add_subcommand("report", "Tabulate report.json files");
  report->add_option("reports", report_files, "report.json files")->required()->check(CLI::ExistingFile);
  report->add_flag("--csv", report_csv, "Emit CSV instead of an aligned table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 1;
  }

  try {
    if (*search) return run_search(search_flags, search_out, search_resume, Method::kDass);
    if (*baseline) return run_search(baseline_flags, baseline_out, baseline_resume, Method::kBaseline);

    if (*finetune) {
      CheckpointFile file = read_checkpoint_file(ft_ckpt);
      SearchState state = state_from_checkpoint(file);
      if (state.phase != Phase::kFinetune) {
        throw ConfigError(ft_ckpt + " is at phase " + std::string(to_string(state.phase)) + ", expected finetune");
      }
      if (ft_epochs) state.config.epochs_finetune = *ft_epochs;
      if (!ft_data.empty()) state.config.data_dir = ft_data;
      state.config.validate();
      const fs::path out(ft_out);
      fs::create_directories(out);
      write_text(out / "config_resolved.json", config_to_json(state.config));
      const DataSplit data = load_data(state.config);
      RunOptions opts;
      opts.checkpoint_dir = out;
      opts.on_phase_end = [](SearchState& s, Phase p) { log_phase(s, p); };
      write_outputs(run_pipeline(std::move(state), data, opts), out);
      return 0;
    }

    if (*derive_cmd) {
      SearchState state = load_checkpoint(derive_ckpt);
      const Genotype g = derive(state.supernet->alpha_table(false), state.supernet->alpha_table(true),
                                state.supernet->op_set());
      write_text(derive_out, serialize(g));
      std::printf("wrote %s\n", derive_out.c_str());
      return 0;
    }

    if (*eval) {
      SearchState state = load_checkpoint(eval_ckpt);
      const DataSplit data = data_for(state.config, eval_data);
      const Dataset& split = eval_split == "train" ? data.train : eval_split == "val" ? data.val : data.test;
      ForwardMode mode = state.forward_mode();
      Network* net = &state.active();
      std::unique_ptr<Network> built;
      if (!eval_genotype.empty()) {
        const Genotype g = deserialize(read_text(eval_genotype));
        if (!(state.final_net && state.final_net->genotype() == g)) {
          Rng rng(state.config.seed);
          built = instantiate(g, state.net_config, rng, state.supernet.get(), InheritMode::kAll);
          net = built.get();
        }
      }
      const EvalResult r = evaluate(*net, mode, split, state.config.batch_size);
      nlohmann::ordered_json doc{{"split", eval_split}, {"mode", to_string(mode)}, {"accuracy", r.accuracy}, {"loss", r.loss}};
      std::printf("%s\n", doc.dump(2).c_str());
      return 0;
    }

    if (*compare) {
      SearchState a = load_checkpoint(cmp_a);
      SearchState b = load_checkpoint(cmp_b);
      const DataSplit data = data_for(a.config, cmp_data);
      const Tensor probe = probe_batch(a.config, data.test);
      const auto taus = feature_map_similarity(a.active(), a.forward_mode(), b.active(), b.forward_mode(), probe);
      std::ostringstream csv;
      csv << "layer,tau\n";
      for (size_t i = 0; i < taus.size(); ++i) csv << i << ',' << taus[i] << '\n';
      if (cmp_out.empty()) {
        std::cout << csv.str();
      } else {
        write_text(cmp_out, csv.str());
      }
      return 0;
    }

    if (*sweep) {
      const SearchConfig cfg = resolve_config(sweep_flags);
      const auto ratios = parse_list(sweep_ratios);
      std::vector<uint64_t> seeds;
      for (double s : parse_list(sweep_seeds)) {
        if (s < 0 || s != static_cast<double>(static_cast<uint64_t>(s))) throw ConfigError("seeds must be non-negative integers");
        seeds.push_back(static_cast<uint64_t>(s));
      }
      for (double r : ratios)
        if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("ratio " + std::to_string(r) + " outside [0, 1]");
      const fs::path out(sweep_out);
      fs::create_directories(out);
      write_text(out / "config_resolved.json", config_to_json(cfg));
      std::ofstream runs(out / "sweep_runs.csv");
      runs << "seed,ratio,accuracy_dass,accuracy_baseline,nonzero_dass,nonzero_baseline,tau_dass,tau_baseline\n";
      const auto rows = run_sweep(cfg, ratios, seeds, [&runs](const SweepRow& r) {
        runs << r.seed << ',' << r.ratio << ',' << r.dass.top1_accuracy << ',' << r.baseline.top1_accuracy << ','
             << r.dass.params_nonzero << ',' << r.baseline.params_nonzero << ',' << mean(r.tau_dass) << ','
             << mean(r.tau_baseline) << '\n';
        runs.flush();
        std::fprintf(stderr, "seed %llu ratio %.4g: dass %.2f%% baseline %.2f%%\n", static_cast<unsigned long long>(r.seed),
                     r.ratio, r.dass.top1_accuracy, r.baseline.top1_accuracy);
      });
      std::ostringstream csv;
      csv << "ratio,accuracy_dass,accuracy_baseline,nonzero_params\n";
      for (double ratio : ratios) {
        std::vector<double> d, b, nz;
        for (const auto& r : rows) {
          if (r.ratio != ratio) continue;
          d.push_back(r.dass.top1_accuracy);
          b.push_back(r.baseline.top1_accuracy);
          nz.push_back(static_cast<double>(r.dass.params_nonzero));
        }
        csv << ratio << ',' << mean(d) << ',' << mean(b) << ',' << mean(nz) << '\n';
      }
      write_text(out / "sweep.csv", csv.str());
      std::cout << csv.str();
      return 0;
    }

    if (*report) {
      if (report_csv) std::printf("method,pruning_ratio,seed,top1_accuracy,params_nonzero,compression_rate,nid,generalization_gap\n");
      else std::printf("%-13s %6s %5s %8s %10s %12s %8s %8s\n", "method", "ratio", "seed", "top1", "nonzero", "compression", "nid", "gap");
      for (const auto& file : report_files) {
        const MetricsReport r = report_from_json(read_text(file));
        const char* fmt = report_csv ? "%s,%g,%llu,%.4f,%lld,%.4f,%.4f,%.4f\n" : "%-13s %6.3g %5llu %8.2f %10lld %11.2fx %8.3f %8.2f\n";
        std::printf(fmt, r.method.c_str(), r.pruning_ratio, static_cast<unsigned long long>(r.seed), r.top1_accuracy,
                    static_cast<long long>(r.params_nonzero), r.compression_rate, r.nid, r.generalization_gap);
      }
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
