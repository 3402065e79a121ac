// Command-line harness: simulate records and run the filtering experiments.
// Every subcommand writes CSV files into --out-dir.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "asmc/asmc.hpp"

namespace {

using asmc::ExperimentConfig;

constexpr const char* kSchemas = R"(CSV outputs (floats use 17 significant digits):
  simulate-data  record.csv        t,y
                 latent.csv        t,x
                 oracle.csv        t,mean,variance,logZ    (linear_gaussian)
                                   t,p_1,...,p_S,logZ      (finite_state)
  trace          trace_<policy>.csv  n,ess_coeff,n_eff,k_n,degree,logZ,phi_1,...
  khist          khist.csv         policy,k,first_half,second_half
  ess-growth     ess_growth.csv    k,simple,random,greedy
  mse            mse.csv           policy,phi,estimand,mse,se,replicates,reference
  naive-demo     naive_summary.csv estimator,mean,se,target,z_score
                 naive_replicates.csv replicate,weighted,naive,z_ratio
  hub-demo       hub_beta.csv      N,matrix,gap,max_beta,min_beta
                 hub_summary.csv   steps,collapsed_to_hub,max_filter_error
  unbiasedness   unbiasedness.csv  policy,mean_ratio,se,z_score,replicates,min_ess,ess_violations
  --partition-out writes          i,block_id
Policies: sis | bpf | arpf:<tau> | simple:<tau> | random:<tau> | greedy:<tau> | blocks:<q>
Exit codes: 0 success, 1 validation error, 2 numerical error.)";

struct Overrides {
  std::optional<std::size_t> particles, n_steps, replicates, lag, burn_in, reference, threads;
  std::optional<std::size_t> block_size, blocks, gap, from, to;
  std::vector<std::string> policies;
  std::vector<double> taus;
  std::vector<std::string> phis;
  std::optional<std::string> record, model_json;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-N,--particles", o.particles, "Number of particles");
  cmd->add_option("--steps", o.n_steps, "Number of time steps");
  cmd->add_option("--replicates", o.replicates, "Independent replicate runs");
  cmd->add_option("--policy", o.policies, "Policy string (repeatable)");
  cmd->add_option("--tau", o.taus, "Threshold(s) for bare rule names");
  cmd->add_option("--phi", o.phis, "Test function: x, x2, exp_half (repeatable)");
  cmd->add_option("--lag", o.lag, "Smoothing lag");
  cmd->add_option("--burn-in", o.burn_in, "Leading steps excluded from summaries");
  cmd->add_option("--reference-particles", o.reference, "Particles in the reference filter");
  cmd->add_option("--threads", o.threads, "Worker threads (0 = all cores)");
  cmd->add_option("--record", o.record, "Observation record CSV (t,y) instead of simulating");
  cmd->add_option("--model", o.model_json, "Model as inline JSON, e.g. {\"kind\":\"stochastic_volatility\"}");
  cmd->add_option("--block-size", o.block_size, "Block size q");
  cmd->add_option("--blocks", o.blocks, "Number of blocks s");
  cmd->add_option("--gap", o.gap, "Gap n-p for beta vectors");
  cmd->add_option("--from", o.from, "First step written by trace");
  cmd->add_option("--to", o.to, "Last step written by trace");
}

void apply(const Overrides& o, ExperimentConfig& c) {
  if (o.model_json) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(*o.model_json);
    } catch (const nlohmann::json::exception& e) {
      throw asmc::ValidationError(std::string("--model is not valid JSON: ") + e.what());
    }
    c.model = asmc::model_from_json(j);
  }
  if (o.particles) c.particles = *o.particles;
  if (o.n_steps) c.n_steps = *o.n_steps;
  if (o.replicates) c.replicates = *o.replicates;
  if (!o.policies.empty()) c.policies = o.policies;
  if (!o.taus.empty()) c.taus = o.taus;
  if (!o.phis.empty()) c.test_functions = o.phis;
  if (o.lag) c.lag = *o.lag;
  if (o.burn_in) c.burn_in = *o.burn_in;
  if (o.reference) c.reference_particles = *o.reference;
  if (o.threads) c.threads = static_cast<unsigned>(*o.threads);
  if (o.record) c.record_path = *o.record;
  if (o.block_size) c.block_size = *o.block_size;
  if (o.blocks) c.blocks = *o.blocks;
  if (o.gap) c.gap = *o.gap;
  if (o.from) c.window_from = *o.from;
  if (o.to) c.window_to = *o.to;
}

ExperimentConfig defaults_for(const std::string& cmd) {
  ExperimentConfig c;
  if (cmd == "trace") {
    c.particles = 1024;
    c.n_steps = 1000;
    c.policies = {"bpf", "arpf:0.6", "simple:0.6", "random:0.6", "greedy:0.6"};
  } else if (cmd == "khist") {
    c.particles = 1024;
    c.n_steps = 5000;
  } else if (cmd == "ess-growth") {
    c.particles = 1024;
    c.n_steps = 1000;
  } else if (cmd == "mse") {
    c.policies = {"simple", "random", "greedy"};
    c.taus = {0.3, 0.6, 0.9};
  } else if (cmd == "naive-demo") {
    c.model = asmc::demo_finite_state();
    c.n_steps = 10;
    c.replicates = 200;
    c.test_functions = {"x"};
  } else if (cmd == "hub-demo") {
    c.model = asmc::LinearGaussianModel{1.0, 0.0};
    c.particles = 64;
    c.n_steps = 20;
  } else if (cmd == "unbiasedness") {
    c.model = asmc::demo_finite_state();
    c.particles = 64;
    c.n_steps = 25;
    c.replicates = 2000;
    c.policies = {"bpf", "arpf:0.5", "simple:0.5", "random:0.5", "greedy:0.5", "blocks:4"};
  } else if (cmd == "simulate-data") {
    c.n_steps = 1000;
  }
  return c;
}

void simulate_command(const ExperimentConfig& c, const std::optional<std::string>& partition_spec) {
  c.validate();
  std::visit(
      [&](const auto& model) {
        const auto data = asmc::simulate_data(model, c.n_steps, c.seed);
        auto rec = asmc::open_output(c.out_dir, "record.csv");
        asmc::write_record_csv(rec, data.record);
        auto lat = asmc::open_output(c.out_dir, "latent.csv");
        lat << "t,x\n";
        for (std::size_t t = 0; t < data.latent.size(); ++t)
          lat << t << ',' << asmc::format_real(static_cast<double>(data.latent[t])) << '\n';
        using M = std::decay_t<decltype(model)>;
        if constexpr (std::is_same_v<M, asmc::LinearGaussianModel>) {
          auto os = asmc::open_output(c.out_dir, "oracle.csv");
          asmc::write_kalman_csv(os, asmc::kalman_predictive(model, data.record));
        } else if constexpr (std::is_same_v<M, asmc::FiniteStateModel>) {
          auto os = asmc::open_output(c.out_dir, "oracle.csv");
          asmc::write_discrete_csv(os, asmc::discrete_forward(model, data.record));
        }
      },
      c.model);
  if (partition_spec) {
    const auto policy = asmc::parse_policy(*partition_spec, c.particles);
    const auto* fixed = std::get_if<asmc::FixedPolicy>(&policy);
    asmc::require(fixed != nullptr, "--partition-out needs a fixed policy such as blocks:<q>");
    auto os = asmc::open_output(c.out_dir, "partition.csv");
    asmc::write_partition_csv(os, fixed->spec.partition(c.particles));
  }
}

void print_summary(const std::string& cmd, const ExperimentConfig& c) {
  using asmc::format_real;
  if (cmd == "trace") {
    for (const auto& t : asmc::trace_experiment(c)) {
      double min_ess = 1.0;
      for (const auto& d : t.diagnostics) min_ess = std::min(min_ess, d.ess_coeff);
      std::cout << t.policy << ": steps=" << t.diagnostics.size() - 1 << " min_ess=" << format_real(min_ess)
                << " logZ=" << format_real(t.diagnostics.back().log_z) << '\n';
    }
  } else if (cmd == "khist") {
    for (const auto& h : asmc::khist_experiment(c))
      std::cout << h.policy << ": P(K>1)=" << format_real(h.fraction_above_one)
                << " tv_halves=" << format_real(h.total_variation) << '\n';
  } else if (cmd == "ess-growth") {
    for (const auto& g : asmc::ess_growth_experiment(c)) {
      std::cout << g.rule << ':';
      for (double e : g.mean_ess) std::cout << ' ' << format_real(e);
      std::cout << '\n';
    }
  } else if (cmd == "mse") {
    const auto rep = asmc::mse_experiment(c);
    for (const auto& r : rep.rows)
      std::cout << r.policy << ' ' << r.phi << ' ' << r.estimand << ": mse=" << format_real(r.mse)
                << " se=" << format_real(r.se) << '\n';
  } else if (cmd == "naive-demo") {
    const auto r = asmc::naive_demo_experiment(c);
    std::cout << "oracle=" << format_real(r.oracle) << "\nweighted=" << format_real(r.weighted.mean)
              << " se=" << format_real(r.weighted.se) << " z=" << format_real(r.weighted_z)
              << "\nnaive=" << format_real(r.naive.mean) << " se=" << format_real(r.naive.se)
              << " z=" << format_real(r.naive_z) << "\nZ ratio=" << format_real(r.z_ratio.mean)
              << " se=" << format_real(r.z_ratio.se) << '\n';
  } else if (cmd == "hub-demo") {
    const auto r = asmc::hub_demo_experiment(c);
    std::cout << "collapsed_to_hub=" << (r.collapsed_to_hub ? "yes" : "no")
              << " max_filter_error=" << format_real(r.max_filter_error) << '\n';
    for (const auto& b : r.beta)
      std::cout << b.matrix << " N=" << b.particles << " max_beta=" << format_real(b.max_beta) << '\n';
  } else if (cmd == "unbiasedness") {
    for (const auto& r : asmc::unbiasedness_experiment(c))
      std::cout << r.policy << ": mean Z/Z=" << format_real(r.ratio.mean) << " se=" << format_real(r.ratio.se)
                << " z=" << format_real(r.z_score) << " ess_violations=" << r.violations << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential Monte Carlo with adaptive interaction: experiment harness"};
  app.footer(kSchemas);
  app.require_subcommand(1);
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir, config_path;
  app.add_option("--seed", seed, "Master seed")->option_text("UINT");
  app.add_option("--out-dir", out_dir, "Directory for CSV output");
  app.add_option("--config", config_path, "JSON config file");

  const std::vector<std::pair<std::string, std::string>> commands{
      {"simulate-data", "Simulate an observation record (and exact oracle output when available)"},
      {"trace", "Per-step ESS, depth K_n, degree and log Z for each policy"},
      {"khist", "Histogram of K_n over two time halves after burn-in"},
      {"ess-growth", "Time-averaged E versus k for Simple, Random and Greedy"},
      {"mse", "MSE of lag smoother, filter and predictor against a reference"},
      {"naive-demo", "Weighted block estimator versus naive averaging of small filters"},
      {"hub-demo", "To-hub collapse and beta vectors of star walks and block designs"},
      {"unbiasedness", "Mean of Z_n^N / Z_n against the exact likelihood"}};
  std::vector<Overrides> overrides(commands.size());
  std::optional<std::string> partition_out;
  for (std::size_t i = 0; i < commands.size(); ++i) {
    auto* cmd = app.add_subcommand(commands[i].first, commands[i].second);
    cmd->fallthrough();
    add_overrides(cmd, overrides[i]);
    if (commands[i].first == "simulate-data")
      cmd->add_option("--partition-out", partition_out, "Also write partition.csv for a fixed policy");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    std::size_t which = 0;
    for (std::size_t i = 0; i < commands.size(); ++i)
      if (app.got_subcommand(commands[i].first)) which = i;
    const std::string name = commands[which].first;
    ExperimentConfig config = defaults_for(name);
    if (config_path) {
      std::ifstream is(*config_path);
      asmc::require(static_cast<bool>(is), "cannot open config " + *config_path);
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(is);
      } catch (const nlohmann::json::exception& e) {
        throw asmc::ValidationError(std::string("config is not valid JSON: ") + e.what());
      }
      config = asmc::config_from_json(j, config);
    }
    apply(overrides[which], config);
    if (seed) config.seed = *seed;
    if (out_dir) config.out_dir = *out_dir;
    if (name == "simulate-data") {
      simulate_command(config, partition_out);
    } else {
      print_summary(name, config);
    }
  } catch (const asmc::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const asmc::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
