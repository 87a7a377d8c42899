#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "geoflow/config.hpp"
#include "geoflow/runner.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  long long seed = -1;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment config (JSON)")->required();
  cmd->add_option("--out", args.out_dir, "output run directory (default runs/<name>)");
  cmd->add_option("--seed", args.seed, "seed override")->each([&](const std::string&) {
    args.seed_set = true;
  });
}

geoflow::runner::RunContext make_context(const CommonArgs& args) {
  geoflow::runner::RunContext ctx;
  ctx.experiment = geoflow::config::load_experiment(args.config_path);
  if (args.seed_set) ctx.experiment.seed = static_cast<std::uint64_t>(args.seed);
  ctx.out = args.out_dir.empty() ? std::filesystem::path("runs") / ctx.experiment.name
                                 : std::filesystem::path(args.out_dir);
  return ctx;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"density-geodesic flow matching laboratory"};
  app.require_subcommand(1);

  CommonArgs geodesic_args, distill_args, fm_args, sample_args, eval_args;
  auto* geodesic = app.add_subcommand("geodesic", "node-based geodesic solve + grid oracle");
  add_common(geodesic, geodesic_args);
  auto* distill = app.add_subcommand("distill", "teacher-student geodesic distillation");
  add_common(distill, distill_args);
  auto* train_fm = app.add_subcommand("train-fm", "conditional flow matching training");
  add_common(train_fm, fm_args);
  auto* sample = app.add_subcommand("sample", "ODE sampling from a velocity checkpoint");
  add_common(sample, sample_args);
  auto* eval = app.add_subcommand("eval", "metrics suite over a run");
  add_common(eval, eval_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::fprintf(stderr, "%s\n", e.what());
    return 2;
  }

  try {
    if (geodesic->parsed()) geoflow::runner::cmd_geodesic(make_context(geodesic_args));
    if (distill->parsed()) geoflow::runner::cmd_distill(make_context(distill_args));
    if (train_fm->parsed()) geoflow::runner::cmd_train_fm(make_context(fm_args));
    if (sample->parsed()) geoflow::runner::cmd_sample(make_context(sample_args));
    if (eval->parsed()) geoflow::runner::cmd_eval(make_context(eval_args));
  } catch (const geoflow::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  }
  return 0;
}
