#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "wzmerge/harness.hpp"
#include "wzmerge/kernels.hpp"

namespace {

using wzmerge::RunConfig;

int fail(const std::exception& e) {
  std::string msg = e.what();
  std::string type = "internal";
  for (const char* k : {"config", "sim", "data", "model", "policy", "io"}) {
    const std::string prefix = std::string(k) + ":";
    if (msg.rfind(prefix, 0) == 0) {
      type = k;
      msg = msg.substr(prefix.size());
      if (!msg.empty() && msg[0] == ' ') msg.erase(0, 1);
      break;
    }
  }
  const nlohmann::json rec{{"error", {{"type", type}, {"message", msg}}}};
  std::cerr << rec.dump() << "\n";
  return 1;
}

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  size_t start = 0;
  while (start <= csv.size()) {
    const size_t comma = csv.find(',', start);
    const size_t end = comma == std::string::npos ? csv.size() : comma;
    if (end > start) out.push_back(csv.substr(start, end - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"work-zone truck merging laboratory"};
  app.require_subcommand(1);

  std::string config_path, out_dir, in_dir, kernels_name;
  std::string policies_csv, volumes_csv;
  uint64_t seed = 0;
  double gen_duration = 0.0, gen_volume = 0.0, eval_duration = 0.0;
  double collection_s = 0.0, collection_volume = 0.0;

  app.add_option("--kernels", kernels_name, "force a compute backend (scalar, avx2, neon)");

  const auto add_shared = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON run configuration");
    cmd->add_option("--seed", seed, "master seed override");
    cmd->add_option("--out", out_dir, "output directory override");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "simulate and extract labeled windows");
  add_shared(gen);
  CLI::Option* o_gen_dur = gen->add_option("--duration", gen_duration, "simulated seconds");
  CLI::Option* o_gen_vol =
      gen->add_option("--volume", gen_volume, "capacity fraction in (0, 1]");
  CLI::Option* o_coll_dur = gen->add_option("--collection-duration", collection_s,
                                            "baseline collection run, simulated seconds");
  CLI::Option* o_coll_vol = gen->add_option("--collection-volume", collection_volume,
                                            "baseline collection capacity fraction");

  CLI::App* train = app.add_subcommand("train", "train conflict models and fit baselines");
  add_shared(train);

  CLI::App* eval = app.add_subcommand("eval", "run the policy x volume evaluation grid");
  add_shared(eval);
  CLI::Option* o_policies =
      eval->add_option("--policies", policies_csv, "comma list: lstm,bayes,p50,p85");
  CLI::Option* o_volumes =
      eval->add_option("--volumes", volumes_csv, "comma list of capacity fractions");
  CLI::Option* o_eval_dur =
      eval->add_option("--duration", eval_duration, "simulated seconds per cell");

  CLI::App* report = app.add_subcommand("report", "summarize an evaluation report");
  report->add_option("--config", config_path, "JSON run configuration");
  CLI::Option* o_in = report->add_option("--in", in_dir, "directory with eval_report.json");
  report->add_option("--out", out_dir, "output directory override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    const nlohmann::json rec{{"error", {{"type", "config"}, {"message", e.what()}}}};
    std::cerr << rec.dump() << "\n";
    return 1;
  }

  try {
    if (!kernels_name.empty()) wzmerge::kernels::select_backend(kernels_name);

    RunConfig cfg;
    if (!config_path.empty()) cfg = wzmerge::load_run_config(config_path);
    for (CLI::App* cmd : {gen, train, eval}) {
      if (cmd->parsed()) {
        if (cmd->count("--seed") > 0) cfg.seed = seed;
        if (cmd->count("--out") > 0) cfg.out_dir = out_dir;
      }
    }

    if (gen->parsed()) {
      if (o_gen_dur->count() > 0) cfg.gen_duration_s = gen_duration;
      if (o_gen_vol->count() > 0) cfg.gen_volume_fraction = gen_volume;
      if (o_coll_dur->count() > 0) cfg.collection_duration_s = collection_s;
      if (o_coll_vol->count() > 0) cfg.collection_volume_fraction = collection_volume;
      wzmerge::cmd_gen_data(cfg);
      std::cout << "gen-data: wrote datasets and manifest in '" << cfg.out_dir << "'\n";
    } else if (train->parsed()) {
      wzmerge::cmd_train(cfg);
      std::cout << "train: wrote models, thresholds and training metrics in '"
                << cfg.out_dir << "'\n";
    } else if (eval->parsed()) {
      if (o_policies->count() > 0) cfg.policies = split_list(policies_csv);
      if (o_volumes->count() > 0) {
        cfg.volumes.clear();
        for (const std::string& v : split_list(volumes_csv))
          cfg.volumes.push_back(wzmerge::parse_double(v));
      }
      if (o_eval_dur->count() > 0) cfg.eval_duration_s = eval_duration;
      wzmerge::cmd_eval(cfg);
      std::cout << "eval: wrote evaluation report in '" << cfg.out_dir << "'\n";
    } else if (report->parsed()) {
      if (o_in->count() > 0) cfg.out_dir = in_dir;
      if (report->count("--out") > 0) cfg.out_dir = out_dir;
      wzmerge::cmd_report(cfg);
    }
    return 0;
  } catch (const std::exception& e) {
    return fail(e);
  }
}
