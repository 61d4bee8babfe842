#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gtf/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string corpus_path;
  std::string model_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<double> tau;
  std::string ablate_csv;
  int threads = 1;
};

std::vector<std::string> split_csv(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream in(csv);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

gtf::TrainConfig resolve_config(const CommonArgs& args) {
  gtf::TrainConfig cfg;
  if (!args.config_path.empty()) cfg = gtf::load_train_config(args.config_path);
  if (args.seed) cfg.seed = *args.seed;
  if (args.tau) cfg.tau = *args.tau;
  if (!args.ablate_csv.empty()) cfg = gtf::apply_ablation(cfg, split_csv(args.ablate_csv));
  cfg.validate();
  return cfg;
}

void apply_overrides(gtf::TrainConfig& cfg, const CommonArgs& args) {
  if (args.seed) cfg.seed = *args.seed;
  if (args.tau) cfg.tau = *args.tau;
  cfg.validate();
}

fs::path ensure_out_dir(const CommonArgs& args) {
  fs::path dir = args.out_dir.empty() ? fs::path(".") : fs::path(args.out_dir);
  fs::create_directories(dir);
  return dir;
}

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_corpus, bool needs_model,
                bool takes_config) {
  if (takes_config) cmd->add_option("--config", args.config_path, "JSON config file");
  auto* corpus = cmd->add_option("--corpus", args.corpus_path, "JSON-lines corpus");
  if (needs_corpus) corpus->required();
  if (needs_model) {
    cmd->add_option("--model", args.model_path, "model checkpoint")->required();
  }
  cmd->add_option("--seed", args.seed, "RNG seed override");
  cmd->add_option("--tau", args.tau, "sentence-selection threshold override");
  cmd->add_option("--ablate", args.ablate_csv, "comma-separated ablation flags");
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--threads", args.threads, "worker threads")->check(CLI::PositiveNumber);
}

int run_train(const CommonArgs& args) {
  gtf::TrainConfig cfg = resolve_config(args);
  gtf::Corpus corpus = gtf::load_corpus_jsonl(args.corpus_path);
  gtf::TrainResult result = gtf::train(corpus, cfg, args.threads);

  fs::path dir = ensure_out_dir(args);
  gtf::save_checkpoint((dir / "model.gtfm").string(), result.model, cfg);
  gtf::write_history_csv((dir / "history.csv").string(), result.history);

  double best_val = 0.0;
  for (const auto& r : result.history) best_val = std::max(best_val, r.val_metric);
  std::printf("trained %zu epochs; best validation %.4f\n", result.history.size(),
              best_val);
  std::printf("model: %s\n", (dir / "model.gtfm").c_str());
  return 0;
}

int run_eval(const CommonArgs& args) {
  gtf::LoadedModel loaded = gtf::load_checkpoint(args.model_path);
  apply_overrides(loaded.cfg, args);
  gtf::Corpus corpus = gtf::load_corpus_jsonl(args.corpus_path);
  gtf::Metrics metrics = gtf::evaluate(loaded.model, corpus, loaded.cfg);
  std::cout << gtf::metrics_to_json(metrics);
  if (!args.out_dir.empty()) {
    gtf::write_metrics_json((ensure_out_dir(args) / "metrics.json").string(), metrics);
  }
  return 0;
}

int run_predict(const CommonArgs& args) {
  gtf::LoadedModel loaded = gtf::load_checkpoint(args.model_path);
  apply_overrides(loaded.cfg, args);
  gtf::Corpus corpus = gtf::load_corpus_jsonl(args.corpus_path);
  auto probs = gtf::predict(loaded.model, corpus, loaded.cfg);

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!args.out_dir.empty()) {
    file.open((ensure_out_dir(args) / "predictions.jsonl").string());
    out = &file;
  }
  for (std::size_t i = 0; i < corpus.docs.size(); ++i) {
    json j;
    j["id"] = corpus.docs[i].id;
    std::vector<double> p(probs[i].data(), probs[i].data() + probs[i].size());
    j["probs"] = p;
    json labels = json::array();
    if (loaded.cfg.task == gtf::Task::kMultilabel) {
      for (int l = 0; l < loaded.model.labels.size(); ++l) {
        if (probs[i][l] >= 0.5) labels.push_back(loaded.model.labels.names[l]);
      }
    } else {
      int arg = 0;
      for (int l = 1; l < loaded.model.labels.size(); ++l) {
        if (probs[i][l] > probs[i][arg]) arg = l;
      }
      labels.push_back(loaded.model.labels.names[arg]);
    }
    j["labels"] = labels;
    (*out) << j.dump() << '\n';
  }
  return 0;
}

int run_tune_tau(const CommonArgs& args) {
  gtf::TrainConfig cfg = resolve_config(args);
  gtf::Corpus corpus = gtf::load_corpus_jsonl(args.corpus_path);
  gtf::TauSearchResult result = gtf::tune_tau(corpus, cfg);

  std::printf("tau      metric\n");
  for (const auto& [tau, score] : result.table) {
    std::printf("%.2f     %.4f\n", tau, score);
  }
  std::printf("best tau: %.2f\n", result.best_tau);
  if (!args.out_dir.empty()) {
    json j;
    j["best_tau"] = result.best_tau;
    json table = json::array();
    for (const auto& [tau, score] : result.table) {
      table.push_back({{"tau", tau}, {"metric", score}});
    }
    j["table"] = table;
    std::ofstream out((ensure_out_dir(args) / "tau.json").string());
    out << j.dump(2) << '\n';
  }
  return 0;
}

int run_cv(const CommonArgs& args) {
  gtf::TrainConfig cfg = resolve_config(args);
  gtf::Corpus corpus = gtf::load_corpus_jsonl(args.corpus_path);
  gtf::Metrics metrics = gtf::cross_validate(corpus, 10, cfg, args.threads);
  std::cout << gtf::metrics_to_json(metrics);
  std::printf("%s: %s\n", metrics.metric.c_str(), gtf::format_report(metrics).c_str());
  if (!args.out_dir.empty()) {
    gtf::write_metrics_json((ensure_out_dir(args) / "metrics.json").string(), metrics);
  }
  return 0;
}

int run_chunks(const CommonArgs& args) {
  gtf::LoadedModel loaded = gtf::load_checkpoint(args.model_path);
  apply_overrides(loaded.cfg, args);
  gtf::Corpus corpus = gtf::load_corpus_jsonl(args.corpus_path);
  gtf::ChunkFractions fractions = gtf::chunk_analysis(loaded.model, corpus, loaded.cfg);
  std::printf("chunk,fraction\n");
  for (int c = 0; c < 3; ++c) std::printf("%d,%.6f\n", c + 1, fractions.fraction[c]);
  if (!args.out_dir.empty()) {
    gtf::write_chunk_csv((ensure_out_dir(args) / "chunks.csv").string(), fractions);
  }
  return 0;
}

int run_ablate(const CommonArgs& args) {
  gtf::TrainConfig cfg;
  if (!args.config_path.empty()) cfg = gtf::load_train_config(args.config_path);
  if (args.seed) cfg.seed = *args.seed;
  if (args.tau) cfg.tau = *args.tau;
  cfg.validate();
  gtf::Corpus corpus = gtf::load_corpus_jsonl(args.corpus_path);
  std::vector<std::string> only = split_csv(args.ablate_csv);
  auto rows = gtf::run_ablation_suite(corpus, cfg, args.threads, only);

  std::printf("variant    metric\n");
  for (const auto& row : rows) std::printf("%-10s %.4f\n", row.name.c_str(), row.metric);
  if (!args.out_dir.empty()) {
    std::ofstream out((ensure_out_dir(args) / "ablation.csv").string());
    out << "variant,metric\n";
    char line[96];
    for (const auto& row : rows) {
      std::snprintf(line, sizeof(line), "%s,%.10g\n", row.name.c_str(), row.metric);
      out << line;
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"graph-tree fusion long-document classifier"};
  app.require_subcommand(1);

  CommonArgs train_args, eval_args, predict_args, tau_args, cv_args, chunk_args,
      ablate_args;

  add_common(app.add_subcommand("train", "train a model"), train_args, true, false, true);
  add_common(app.add_subcommand("eval", "evaluate a checkpoint"), eval_args, true, true,
             false);
  add_common(app.add_subcommand("predict", "emit per-document probabilities"),
             predict_args, true, true, false);
  add_common(app.add_subcommand("tune-tau", "grid-search the selection threshold"),
             tau_args, true, false, true);
  add_common(app.add_subcommand("cv", "10-fold stratified cross-validation"), cv_args,
             true, false, true);
  add_common(app.add_subcommand("chunks", "sentence-selection rate per document third"),
             chunk_args, true, true, false);
  add_common(app.add_subcommand("ablate", "train and compare ablation variants"),
             ablate_args, true, false, true);

  try {
    app.parse(argc, argv);
    if (app.got_subcommand("train")) return run_train(train_args);
    if (app.got_subcommand("eval")) return run_eval(eval_args);
    if (app.got_subcommand("predict")) return run_predict(predict_args);
    if (app.got_subcommand("tune-tau")) return run_tune_tau(tau_args);
    if (app.got_subcommand("cv")) return run_cv(cv_args);
    if (app.got_subcommand("chunks")) return run_chunks(chunk_args);
    if (app.got_subcommand("ablate")) return run_ablate(ablate_args);
    return 2;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const gtf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const gtf::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const gtf::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
