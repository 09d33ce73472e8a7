#include "hlab/hlab.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> jobs;
  std::vector<std::string> overrides;
  bool dry_run = false;
};

nlohmann::json load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw hlab::ArgumentError("cannot open config '" + path + "'");
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw hlab::ArgumentError("config '" + path + "' is not valid JSON: " + e.what());
  }
}

int fail(const std::exception& e, const std::optional<std::string>& out_dir) {
  const nlohmann::json err = hlab::error_json(e);
  std::cerr << err.dump() << '\n';
  if (out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(*out_dir, ec);
    std::ofstream os(std::filesystem::path(*out_dir) / "error.json");
    if (os) os << err.dump(2) << '\n';
  }
  return 2;
}

int run(const std::string& kind, const Common& c) {
  std::optional<std::string> out_dir = c.out;
  try {
    nlohmann::json j = load_config(c.config);
    for (const auto& o : c.overrides) hlab::apply_override(j, o);
    if (j.contains("kind") && j.at("kind") != kind)
      throw hlab::ArgumentError("config kind '" + j.at("kind").get<std::string>() + "' does not match subcommand '" + kind + "'");
    j["kind"] = kind;
    hlab::ExperimentConfig cfg = j.get<hlab::ExperimentConfig>();
    if (c.seed) cfg.seed = *c.seed;
    if (c.out) cfg.out = *c.out;
    if (c.jobs) cfg.jobs = *c.jobs;
    out_dir = cfg.out;
    cfg.validate();
    if (c.dry_run) {
      std::cout << nlohmann::json(cfg).dump(2) << '\n';
      return 0;
    }
    const auto res = hlab::run_experiment(cfg);
    std::cout << nlohmann::json{{"status", "ok"}, {"kind", kind}, {"out", cfg.out}, {"outputs", res.outputs}, {"wall_time_s", res.wall_time}}.dump()
              << '\n';
    return 0;
  } catch (const std::exception& e) {
    return fail(e, out_dir);
  }
}

int selftest(const std::optional<std::string>& out) {
  try {
    const auto checks = hlab::run_selftest();
    for (const auto& ch : checks)
      std::printf("%s %-28s value=%.3e tol=%.1e\n", ch.passed() ? "PASS" : "FAIL", ch.name.c_str(), ch.value, ch.tolerance);
    const nlohmann::json j = hlab::selftest_json(checks);
    if (out) {
      std::filesystem::create_directories(*out);
      std::ofstream(std::filesystem::path(*out) / "selftest.json") << j.dump(2) << '\n';
    }
    return j.at("passed").get<bool>() ? 0 : 1;
  } catch (const std::exception& e) {
    return fail(e, out);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hlab: quantitative stochastic homogenization experiments"};
  app.set_version_flag("--version", std::string(hlab::kVersion));
  app.require_subcommand(1);

  const std::map<std::string, std::pair<std::string, std::string>> experiments{
      {"gen-field", {"field-gen", "sample a coefficient field into the field container"}},
      {"coarsen", {"coarsen", "coarse-grained matrices and the subadditivity cascade"}},
      {"corrector", {"corrector", "homogenized matrix, correctors, flux correctors and R(m)"}},
      {"twoscale", {"twoscale", "two-scale expansion error for a Dirichlet problem"}},
      {"cascade", {"cascade", "fluctuation statistics of b_r(0) and a(box_n)"}},
      {"walk", {"walk", "random walk in the conductance network"}},
      {"green", {"green", "parabolic Green function against the homogenized kernel"}},
  };

  Common common;
  std::uint64_t seed = 0;
  std::string out;
  int jobs = 0;
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, info] : experiments) {
    CLI::App* sub = app.add_subcommand(name, info.second);
    sub->add_option("--config", common.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "master seed");
    sub->add_option("--out", out, "output directory");
    sub->add_option("--jobs", jobs, "worker threads (default: HLAB_JOBS, else 1)")->check(CLI::PositiveNumber);
    sub->add_option("--set", common.overrides, "override a config entry, e.g. walk.paths=20000")->take_all();
    sub->add_flag("--dry-run", common.dry_run, "validate and print the resolved config");
    subs[name] = sub;
  }
  CLI::App* st = app.add_subcommand("selftest", "closed-form and exact-identity checks");
  std::string st_out;
  st->add_option("--out", st_out, "write selftest.json here");

  CLI11_PARSE(app, argc, argv);

  if (st->parsed()) return selftest(st_out.empty() ? std::nullopt : std::optional<std::string>(st_out));
  for (const auto& [name, sub] : subs) {
    if (!sub->parsed()) continue;
    if (sub->count("--seed")) common.seed = seed;
    if (sub->count("--out")) common.out = out;
    if (sub->count("--jobs")) common.jobs = jobs;
    return run(experiments.at(name).first, common);
  }
  return 0;
}
