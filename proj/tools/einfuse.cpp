// einfuse: validate / stitch / lower / run / cost / compare

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "einfuse/cost_model.hpp"
#include "einfuse/fusion.hpp"
#include "einfuse/interpreter.hpp"
#include "einfuse/mamba.hpp"
#include "einfuse/merge.hpp"
#include "einfuse/report.hpp"
#include "einfuse/schedule.hpp"
#include "einfuse/text_format.hpp"
#include "einfuse/validate.hpp"

using namespace einfuse;
namespace fs = std::filesystem;

namespace {

enum Exit { ok = 0, diagnostics = 1, usage = 2 };

struct Opts {
  std::string builtin, cascade, params, hw, out, manifest, order, tiles;
  std::vector<std::string> policies;
  std::string phase = "prefill";
  std::string scenarios = "paper";
  bool tiny = false, unmerged = false, error_json = false, force = false, registers = false, json_out = false;
  std::uint64_t seed = 1;
  bool phase_given = false;
};

struct Failure {
  int code;
  std::vector<Diagnostic> diags;
};

[[noreturn]] void fail(int code, const std::string& tag, const std::string& msg) {
  throw Failure{code, {{tag, msg, -1, 0, 0, false}}};
}

void report_failure(const Failure& f, bool as_json) {
  if (as_json) {
    json j{{"exit_code", f.code}, {"diagnostics", to_json(f.diags)}};
    std::cerr << j.dump(2) << "\n";
    return;
  }
  for (auto& d : f.diags) std::cerr << to_string(d) << "\n";
}

void print_warnings(const std::vector<Diagnostic>& ds) {
  for (auto& d : ds)
    if (d.warning) std::cerr << to_string(d) << "\n";
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(Exit::usage, "io", "cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

RunManifest manifest_of(const std::string& cmd, const Opts& o) {
  RunManifest m;
  m.command = cmd;
  m.builtin = o.builtin;
  m.cascade_file = o.cascade;
  m.params = o.params;
  m.tiny = o.tiny;
  m.policies = o.policies;
  m.hw_file = o.hw;
  m.phase = o.phase;
  m.scenarios = o.scenarios;
  m.out_dir = o.out.empty() ? "." : o.out;
  m.seed = o.seed;
  return m;
}

void apply_manifest(Opts& o, const std::string& cmd) {
  if (o.manifest.empty()) return;
  RunManifest m;
  try {
    m = load_manifest(o.manifest);
  } catch (const IrError& e) {
    fail(Exit::usage, "manifest", e.what());
  }
  if (!m.command.empty() && m.command != cmd)
    fail(Exit::usage, "manifest", "manifest records command '" + m.command + "', not '" + cmd + "'");
  o.builtin = m.builtin;
  o.cascade = m.cascade_file;
  o.params = m.params;
  o.tiny = m.tiny;
  o.policies = m.policies;
  o.hw = m.hw_file;
  o.phase = m.phase;
  o.phase_given = true;
  o.scenarios = m.scenarios;
  if (o.out.empty()) o.out = m.out_dir;
  o.seed = m.seed;
}

// records the effective settings, defaults filled in
void save_manifest(const std::string& cmd, const Opts& o) {
  if (o.out.empty()) return;
  RunManifest m = manifest_of(cmd, o);
  if (m.policies.empty()) {
    if (cmd == "cost" || cmd == "compare")
      for (auto p : all_variants()) m.policies.push_back(policy_name(p));
    else
      m.policies.push_back("fully-fused");
  }
  atomic_write(fs::path(o.out) / "manifest.json", to_json(m).dump(2) + "\n");
}

ParamSet params_of(const Opts& o) {
  ParamSet base = o.tiny ? ParamSet::preset("tiny") : ParamSet{};
  ParamSet p;
  try {
    p = ParamSet::parse(o.params, base);
  } catch (const std::exception& e) {
    fail(Exit::usage, "params", e.what());
  }
  if (o.phase_given || o.params.find("phase=") == std::string::npos)
    p = p.with_phase(o.phase == "decode" ? Phase::decode : Phase::prefill);
  auto probs = p.problems();
  if (!probs.empty()) fail(Exit::usage, "params", probs.front());
  return p;
}

struct Loaded {
  Cascade cascade;
  std::optional<ParamSet> params; // builtin only
  std::vector<Diagnostic> diagnostics;
};

Loaded load(const Opts& o) {
  Loaded l;
  if (!o.builtin.empty() && !o.cascade.empty()) fail(Exit::usage, "usage", "give either --builtin or --cascade");
  if (!o.builtin.empty()) {
    if (o.builtin != "mamba1") fail(Exit::usage, "usage", "unknown builtin " + o.builtin);
    l.params = params_of(o);
    l.cascade = build_mamba1(*l.params);
    if (!o.unmerged) {
      auto m = merge_shared_inputs(l.cascade, mamba1_merge_sets());
      l.cascade = m.cascade;
      l.diagnostics = m.diagnostics;
    }
    return l;
  }
  if (o.cascade.empty()) fail(Exit::usage, "usage", "no cascade: use --builtin mamba1 or --cascade FILE");
  auto r = parse(slurp(o.cascade));
  l.diagnostics = r.diagnostics;
  if (!r.ok()) throw Failure{Exit::diagnostics, r.diagnostics};
  l.cascade = *r.cascade;
  auto v = validate(l.cascade);
  l.diagnostics.insert(l.diagnostics.end(), v.begin(), v.end());
  if (has_errors(v)) throw Failure{Exit::diagnostics, l.diagnostics};
  return l;
}

HardwareConfig hw_of(const Opts& o) {
  if (o.hw.empty()) return {};
  try {
    return HardwareConfig::load(o.hw);
  } catch (const IrError& e) {
    fail(Exit::usage, "hw", e.what());
  }
}

StitchPolicy single_policy(const Opts& o, StitchPolicy dflt) {
  if (o.policies.empty()) return dflt;
  if (o.policies.size() > 1) fail(Exit::usage, "usage", "this command takes one --policy");
  return *policy_from_name(o.policies.front());
}

std::vector<StitchPolicy> policy_list(const Opts& o) {
  if (o.policies.empty()) return all_variants();
  std::vector<StitchPolicy> v;
  for (auto& p : o.policies) v.push_back(*policy_from_name(p));
  return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> v;
  std::stringstream ss(s);
  std::string x;
  while (std::getline(ss, x, sep))
    if (!x.empty()) v.push_back(x);
  return v;
}

// "paper" or name:prefill:steps;...
std::vector<Scenario> scenarios_of(const Opts& o) {
  if (o.scenarios == "paper") return paper_scenarios();
  std::vector<Scenario> v;
  for (auto& item : split(o.scenarios, ';')) {
    auto f = split(item, ':');
    if (f.size() != 3) fail(Exit::usage, "usage", "scenario '" + item + "' is not name:prefill:steps");
    try {
      Scenario s{f[0], std::stoll(f[1]), std::stoll(f[2])};
      if (s.prefill < 0 || s.decode_steps < 0) throw std::invalid_argument("negative");
      v.push_back(s);
    } catch (const std::exception&) {
      fail(Exit::usage, "usage", "bad scenario lengths in '" + item + "'");
    }
  }
  if (v.empty()) fail(Exit::usage, "usage", "no scenarios");
  return v;
}

std::string fmt(double x, int prec = 2) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << x;
  return os.str();
}

// commands ---------------------------------------------------------------------

int cmd_validate(const Opts& o) {
  auto l = load(o);
  auto v = validate(l.cascade);
  for (auto& d : v) std::cout << to_string(d) << "\n";
  if (has_errors(v)) throw Failure{Exit::diagnostics, v};
  std::cout << "ok: " << l.cascade.einsums.size() << " Einsums, " << l.cascade.ranks.size() << " ranks\n";
  return Exit::ok;
}

int cmd_stitch(const Opts& o) {
  auto l = load(o);
  auto p = single_policy(o, StitchPolicy::fully_fused);
  auto plan = greedy_stitch(l.cascade, p);
  auto& c = l.cascade;
  if (o.json_out) {
    std::cout << to_json(plan, c).dump(2) << "\n";
  } else {
    std::cout << "policy " << policy_name(p) << ": " << plan.groups.size() << " groups\n";
    for (std::size_t k = 0; k < plan.groups.size(); ++k) {
      auto& g = plan.groups[k];
      std::cout << "  group " << k + 1 << ":";
      for (std::size_t m = 0; m < g.members.size(); ++m) {
        if (m) std::cout << " -" << class_name(g.links[m - 1]) << "-";
        std::cout << " E" << c.einsums[g.members[m]].label();
      }
      std::cout << "\n    chain:";
      for (auto& s : g.chain) {
        std::cout << " [";
        bool first = true;
        for (auto& r : s) std::cout << (first ? "" : ",") << r, first = false;
        std::cout << "]";
      }
      std::cout << "\n";
      for (auto& n : g.notes) std::cout << "    note: " << n << "\n";
    }
  }
  print_warnings(plan.diagnostics);
  if (!o.out.empty()) {
    atomic_write(fs::path(o.out) / "plan.json", to_json(plan, c).dump(2) + "\n");
    save_manifest("stitch", o);
  }
  if (has_errors(plan.diagnostics)) throw Failure{Exit::diagnostics, plan.diagnostics};
  return Exit::ok;
}

int cmd_lower(const Opts& o) {
  auto l = load(o);
  auto& c = l.cascade;
  auto p = single_policy(o, StitchPolicy::fully_fused);
  Schedule sched;
  std::vector<Diagnostic> diags;
  if (!o.order.empty() || !o.tiles.empty()) {
    // explicit mapping request, applied to every group
    LowerOptions opt;
    opt.order = split(o.order, ',');
    opt.force = o.force;
    for (auto& kv : split(o.tiles, ',')) {
      auto eq = kv.find('=');
      if (eq == std::string::npos) fail(Exit::usage, "usage", "tile '" + kv + "' is not rank=size");
      try {
        opt.tiles[kv.substr(0, eq)] = std::stoll(kv.substr(eq + 1));
      } catch (const std::exception&) {
        fail(Exit::usage, "usage", "bad tile size in '" + kv + "'");
      }
    }
    auto plan = greedy_stitch(c, p);
    auto lp = lower_plan(plan, c, opt);
    sched = lp.schedule;
    diags = lp.diagnostics;
  } else {
    auto v = schedule_variant(c, p, hw_of(o));
    sched = v.schedule;
    diags = v.diagnostics;
  }
  if (has_errors(diags)) throw Failure{Exit::diagnostics, diags};
  PrintOptions po;
  po.registers = o.registers;
  if (o.json_out) std::cout << to_json(sched, c).dump(2) << "\n";
  else std::cout << to_pseudocode(sched, c, po);
  print_warnings(diags);
  if (!o.out.empty()) {
    atomic_write(fs::path(o.out) / "schedule.json", to_json(sched, c).dump(2) + "\n");
    atomic_write(fs::path(o.out) / "schedule.txt", to_pseudocode(sched, c, po));
    save_manifest("lower", o);
  }
  return Exit::ok;
}

int cmd_run(const Opts& o) {
  auto l = load(o);
  auto& c = l.cascade;
  auto p = single_policy(o, StitchPolicy::fully_fused);
  std::map<std::string, InputRange> ranges;
  if (l.params) ranges = mamba_input_ranges();
  auto inputs = synthesize_inputs(c, o.seed, ranges);

  auto base = inputs;
  run(unfused_schedule(c), c, base);
  auto v = schedule_variant(c, p, hw_of(o));
  if (has_errors(v.diagnostics)) throw Failure{Exit::diagnostics, v.diagnostics};
  auto fused = inputs;
  auto tr = run(v.schedule, c, fused);
  auto cmp = compare_outputs(c, base, fused);

  std::int64_t worst_itf = 0;
  for (auto& [t, n] : tr.itf) worst_itf = std::max(worst_itf, n);
  bool equal = cmp.max_rel_err <= 1e-10;
  std::cout << (equal ? "EQUIVALENT (max rel err ≤ 1e−10)" : "NOT EQUIVALENT") << "\n";
  std::cout << "policy " << policy_name(p) << ", " << v.schedule.size() << " nest(s), max rel err "
            << cmp.max_rel_err;
  if (!cmp.worst_tensor.empty()) std::cout << " (" << cmp.worst_tensor << ")";
  std::cout << ", max ITF " << worst_itf << ", backing reads " << tr.total_reads() << ", writes "
            << tr.total_writes() << "\n";
  print_warnings(v.diagnostics);
  if (!o.out.empty()) {
    atomic_write(fs::path(o.out) / "trace.csv", trace_csv(tr));
    save_manifest("run", o);
  }
  if (!equal) throw Failure{Exit::diagnostics, {{"not-equivalent", "fused outputs differ from unfused", -1, 0, 0, false}}};
  return Exit::ok;
}

int cmd_cost(const Opts& o) {
  auto l = load(o);
  auto& c = l.cascade;
  auto h = hw_of(o);
  Phase ph = l.params ? l.params->phase : (o.phase == "decode" ? Phase::decode : Phase::prefill);
  std::string csv = cost_csv_header(), util = utilization_csv_header();
  json all = json::array();
  auto ideal = evaluate_ideal(c, h, ph);
  double unf = 0;
  std::cout << std::left << std::setw(12) << "variant" << std::right << std::setw(8) << "groups" << std::setw(14)
            << "latency_ms" << std::setw(10) << "speedup" << std::setw(14) << "inter_MB" << std::setw(14)
            << "intra_MB" << "\n";
  auto row = [&](const CostReport& r) {
    if (r.variant == "unfused") unf = r.latency;
    std::cout << std::left << std::setw(12) << r.variant << std::right << std::setw(8) << r.groups.size()
              << std::setw(14) << fmt(r.latency * 1e3, 4) << std::setw(10)
              << (unf > 0 ? fmt(unf / r.latency) + "x" : std::string("-")) << std::setw(14)
              << fmt(r.inter_bytes() / 1e6, 1) << std::setw(14) << fmt(r.intra_bytes() / 1e6, 1) << "\n";
    csv += cost_csv_rows(r);
    util += utilization_csv_rows(r);
    all.push_back(to_json(r));
    print_warnings(r.warnings);
  };
  auto pols = policy_list(o);
  // unfused first so speedups have a reference
  if (std::find(pols.begin(), pols.end(), StitchPolicy::unfused) == pols.end())
    unf = evaluate_variant(c, StitchPolicy::unfused, h, ph).latency;
  for (auto p : pols)
    if (p == StitchPolicy::unfused) row(evaluate_variant(c, p, h, ph));
  for (auto p : pols)
    if (p != StitchPolicy::unfused) row(evaluate_variant(c, p, h, ph));
  row(ideal);
  std::string dir = o.out.empty() ? "." : o.out;
  atomic_write(fs::path(dir) / ("cost_" + std::string(phase_name(ph)) + ".csv"), csv);
  atomic_write(fs::path(dir) / ("utilization_" + std::string(phase_name(ph)) + ".csv"), util);
  atomic_write(fs::path(dir) / ("cost_" + std::string(phase_name(ph)) + ".json"), all.dump(2) + "\n");
  Opts saved = o;
  saved.out = dir;
  save_manifest("cost", saved);
  return Exit::ok;
}

int cmd_compare(const Opts& o) {
  if (!o.cascade.empty()) fail(Exit::usage, "usage", "compare needs the builtin Mamba layer");
  Opts m = o;
  if (m.builtin.empty()) m.builtin = "mamba1";
  m.phase_given = false;
  ParamSet base = params_of(m);
  auto h = hw_of(o);
  auto scs = scenarios_of(o);
  auto pols = policy_list(o);
  if (std::find(pols.begin(), pols.end(), StitchPolicy::unfused) == pols.end()) pols.insert(pols.begin(), StitchPolicy::unfused);

  std::map<Phase, std::map<std::string, CostReport>> per;
  std::string csv = cost_csv_header(), util = utilization_csv_header();
  for (auto ph : {Phase::prefill, Phase::decode}) {
    auto c = mamba_for_costing(base.with_phase(ph));
    for (auto p : pols) per[ph][policy_name(p)] = evaluate_variant(c, p, h, ph);
    per[ph]["ideal"] = evaluate_ideal(c, h, ph);
    for (auto& [k, r] : per[ph]) {
      csv += cost_csv_rows(r);
      util += utilization_csv_rows(r);
    }
  }
  std::vector<StitchPolicy> e2e_pols = pols;
  auto e2e = end_to_end(base.with_phase(Phase::prefill), scs, h, e2e_pols);

  auto& pu = per[Phase::prefill]["unfused"];
  std::cout << "Mamba layer B=" << base.B << " prefill I=" << base.with_phase(Phase::prefill).I << " E=" << base.E
            << " D=" << base.D << " N=" << base.N << " L=" << base.L << "\n";
  std::cout << "unfused prefill traffic: inter " << fmt(100 * pu.inter_bytes() / pu.total_bytes()) << "%, intra "
            << fmt(100 * pu.intra_bytes() / pu.total_bytes()) << "%, read "
            << fmt(100 * pu.read_bytes() / pu.total_bytes()) << "%, write "
            << fmt(100 * pu.write_bytes() / pu.total_bytes()) << "%\n\n";

  std::cout << std::left << std::setw(12) << "variant" << std::right << std::setw(11) << "prefill_x" << std::setw(10)
            << "decode_x";
  for (auto& s : scs) std::cout << std::setw(16) << s.name;
  std::cout << std::setw(10) << "geomean" << "\n";
  std::vector<std::string> names;
  for (auto p : pols) names.push_back(policy_name(p));
  names.push_back("ideal");
  for (auto& n : names) {
    double pre = per[Phase::prefill]["unfused"].latency / per[Phase::prefill][n].latency;
    double dec = per[Phase::decode]["unfused"].latency / per[Phase::decode][n].latency;
    std::cout << std::left << std::setw(12) << n << std::right << std::setw(11) << fmt(pre) + "x" << std::setw(10)
              << fmt(dec) + "x";
    if (n == "ideal") {
      std::cout << "\n";
      continue;
    }
    for (auto& r : e2e.scenarios) std::cout << std::setw(16) << fmt(r.total.at("unfused") / r.total.at(n)) + "x";
    std::cout << std::setw(10) << fmt(e2e.geomean_speedup.at(n)) + "x" << "\n";
  }

  std::string e2e_csv = "scenario,prefill_len,decode_steps,variant,total_s,speedup\n";
  for (auto& r : e2e.scenarios)
    for (auto& n : names) {
      if (n == "ideal") continue;
      std::ostringstream os;
      os.precision(10);
      os << r.scenario.name << "," << r.scenario.prefill << "," << r.scenario.decode_steps << "," << n << ","
         << r.total.at(n) << "," << r.total.at("unfused") / r.total.at(n) << "\n";
      e2e_csv += os.str();
    }
  std::string dir = o.out.empty() ? "." : o.out;
  atomic_write(fs::path(dir) / "cost.csv", csv);
  atomic_write(fs::path(dir) / "utilization.csv", util);
  atomic_write(fs::path(dir) / "end_to_end.csv", e2e_csv);
  Opts saved = o;
  saved.out = dir;
  saved.builtin = "mamba1";
  save_manifest("compare", saved);
  return Exit::ok;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"einfuse: fusion of extended-Einsum cascades"};
  app.require_subcommand(1);
  Opts o;
  std::vector<std::string> policy_names;
  for (auto p : all_variants()) policy_names.push_back(policy_name(p));

  auto common = [&](CLI::App* s) {
    s->add_option("--builtin", o.builtin, "builtin cascade")->check(CLI::IsMember({"mamba1"}));
    s->add_option("--cascade", o.cascade, "cascade text file");
    s->add_option("--params", o.params, "k=v,... parameters for the builtin (preset=, B=, I=, E=, D=, N=, R=, W=, L=)");
    s->add_flag("--tiny", o.tiny, "start from the tiny preset");
    s->add_flag("--unmerged", o.unmerged, "skip shared-input merging of the builtin");
    s->add_option("--policy", o.policies, "stitching policy / baseline")->check(CLI::IsMember(policy_names));
    s->add_option("--hw", o.hw, "hardware config file (key=value)");
    s->add_option("--phase", o.phase, "prefill or decode")->check(CLI::IsMember({"prefill", "decode"}))->each([&](const std::string&) {
      o.phase_given = true;
    });
    s->add_option("--out", o.out, "output directory");
    s->add_option("--seed", o.seed, "input synthesis seed");
    s->add_option("--manifest", o.manifest, "replay a recorded run");
    s->add_flag("--error-json", o.error_json, "machine-readable errors on stderr");
  };

  auto* v = app.add_subcommand("validate", "parse and validate a cascade");
  auto* st = app.add_subcommand("stitch", "fusion groups of a policy");
  auto* lo = app.add_subcommand("lower", "loop nests of a policy");
  auto* ru = app.add_subcommand("run", "interpret fused and unfused schedules and compare");
  auto* co = app.add_subcommand("cost", "cost report CSVs for one phase");
  auto* cm = app.add_subcommand("compare", "variant table and end-to-end speedups");
  for (auto* s : {v, st, lo, ru, co, cm}) common(s);
  for (auto* s : {st, lo}) s->add_flag("--json", o.json_out, "JSON on stdout");
  lo->add_option("--order", o.order, "outer loop order, comma separated");
  lo->add_option("--tiles", o.tiles, "rank=size,... tile sizes");
  lo->add_flag("--force", o.force, "keep an order that breaks stationarity");
  lo->add_flag("--registers", o.registers, "print unit-resident intermediates as registers");
  cm->add_option("--scenarios", o.scenarios, "'paper' or name:prefill:steps;...");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : Exit::usage;
  }

  std::string cmd = app.get_subcommands().front()->get_name();
  try {
    apply_manifest(o, cmd);
    if (!o.manifest.empty()) {
      RunManifest m = manifest_of(cmd, o);
      auto probs = m.problems();
      if (!probs.empty())
        fail(Exit::usage, "manifest", probs.front());
    }
    if (cmd == "validate") return cmd_validate(o);
    if (cmd == "stitch") return cmd_stitch(o);
    if (cmd == "lower") return cmd_lower(o);
    if (cmd == "run") return cmd_run(o);
    if (cmd == "cost") return cmd_cost(o);
    if (cmd == "compare") return cmd_compare(o);
  } catch (const Failure& f) {
    report_failure(f, o.error_json);
    return f.code;
  } catch (const IrError& e) {
    report_failure({Exit::diagnostics, {{"error", e.what(), -1, 0, 0, false}}}, o.error_json);
    return Exit::diagnostics;
  } catch (const std::exception& e) {
    report_failure({Exit::diagnostics, {{"error", e.what(), -1, 0, 0, false}}}, o.error_json);
    return Exit::diagnostics;
  }
  return Exit::usage;
}
