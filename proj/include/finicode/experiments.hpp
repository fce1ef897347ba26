#pragma once

#include <json.hpp>

#include <charconv>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "coding.hpp"
#include "config.hpp"
#include "models.hpp"
#include "oracle.hpp"

namespace finicode::experiments {

using json = nlohmann::ordered_json;

/// Process exit status; the numeric values are part of the CLI contract.
enum class Status { ok = 0, statistical = 2, invariant = 3, guard = 4 };

struct Check {
  std::string name;
  bool pass = false;
  Status on_fail = Status::statistical;
  std::string detail;
};

struct Outcome {
  json summary = json::object();
  std::vector<Check> checks;

  void check(std::string name, bool pass, Status on_fail, std::string detail) {
    summary["check." + name] = pass ? "pass" : "fail";
    checks.push_back({std::move(name), pass, on_fail, std::move(detail)});
  }
  bool passed() const {
    for (const auto& c : checks)
      if (!c.pass) return false;
    return true;
  }
  /// Invariant violations dominate guard failures, which dominate statistical ones.
  int exit_code() const {
    int code = 0;
    for (const auto& c : checks) {
      if (c.pass) continue;
      const int s = static_cast<int>(c.on_fail);
      if (s == 3) return 3;
      if (s == 4 || code == 0) code = s;
    }
    return code;
  }
};

template <class T>
std::string fmt(const T& x) {
  if constexpr (std::is_floating_point_v<T>) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, static_cast<double>(x));
    return std::string(buf, r.ptr);
  } else if constexpr (std::is_integral_v<T>) {
    return std::to_string(x);
  } else {
    return std::string(x);
  }
}

/// CSV file with the seed and config-hash banner; a default-constructed one discards rows.
class CsvFile {
 public:
  CsvFile() = default;
  CsvFile(const std::filesystem::path& path, const std::string& banner, const std::string& header)
      : out_(std::make_unique<std::ofstream>(path, std::ios::binary)) {
    if (!*out_) throw Error("cannot write " + path.string());
    *out_ << banner << '\n' << header << '\n';
  }
  bool enabled() const { return out_ != nullptr; }

  template <class... T>
  void row(const T&... xs) {
    if (!out_) return;
    bool first = true;
    ((*out_ << (first ? "" : ",") << fmt(xs), first = false), ...);
    *out_ << '\n';
  }

 private:
  std::unique_ptr<std::ofstream> out_;
};

/// Where a run writes its files; a default Sink writes nothing.
class Sink {
 public:
  Sink() = default;
  Sink(std::filesystem::path dir, std::uint64_t seed, std::string hash)
      : dir_(std::move(dir)), seed_(seed), hash_(std::move(hash)) {
    std::filesystem::create_directories(dir_);
  }
  bool enabled() const { return !dir_.empty(); }
  std::string banner() const { return "# seed=" + std::to_string(seed_) + ", config_hash=" + hash_; }

  CsvFile csv(const std::string& name, const std::string& header) const {
    if (!enabled()) return {};
    return CsvFile(dir_ / name, banner(), header);
  }
  void summary(const json& j) const {
    if (!enabled()) return;
    std::ofstream out(dir_ / "summary.json", std::ios::binary);
    out << j.dump(2) << '\n';
  }

 private:
  std::filesystem::path dir_;
  std::uint64_t seed_ = 0;
  std::string hash_;
};

inline const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      "run.seed",
      "model.type", "model.dim", "model.beta", "model.activation", "model.q", "model.table", "model.states",
      "domain.side",
      "sample.count", "sample.guard", "sample.rows", "sample.window", "sample.tolerance", "sample.resamples",
      "stationarity.tolerance", "stationarity.exhaustive", "stationarity.betas",
      "coding.dim", "coding.tau", "coding.windows", "coding.delta", "coding.symbol", "coding.cap", "coding.M",
      "coding.sigma", "coding.sigma_M", "coding.sigma_symbol", "coding.sigma_cap", "coding.alphabet",
      "coding.method", "coding.radius", "coding.steps", "coding.seeds", "coding.guard", "coding.exhaustive_every",
      "coding.requirement_samples", "coding.report_radius",
      "equivalence.runs", "equivalence.resamples", "equivalence.control", "equivalence.control_cap",
      "equivalence.control_symbol", "equivalence.target", "equivalence.budget_seconds", "equivalence.tolerance",
      "equivalence.point_mass", "equivalence.cftp_guard",
      "locality.trials", "locality.steps", "locality.inner_radius", "locality.z_height",
      "tails.samples", "tails.runs", "tails.r2_min", "tails.survival_max", "tails.guard"};
  return keys;
}

namespace detail {

template <class F>
auto for_dim(int d, F&& f) {
  if (d == 1) return f.template operator()<1>();
  if (d == 2) return f.template operator()<2>();
  throw ConfigError("dimension must be 1 or 2, got " + std::to_string(d));
}

template <int D>
HighNoiseModel<D> constant_model(double act) {
  return HighNoiseModel<D>(1, {std::vector<double>{1.0}}, act);
}

/// Calls f(model) for the model described by [model].
template <class F>
auto with_model(const Config& c, F&& f) {
  const std::string type = c.str("model.type", "ising");
  const double act = c.get("model.activation", 0.5);
  return for_dim(c.get("model.dim", 1), [&]<int D>() {
    if (type == "ising") return f(IsingModel<D>(c.get("model.beta", 0.2), act));
    if (type == "colorings") return f(ColoringsModel<D>(c.get("model.q", 8), act));
    if (type == "highnoise") {
      const std::string table = c.str("model.table", "ising");
      if (table == "ising") return f(HighNoiseModel<D>::ising(c.get("model.beta", 0.05), act));
      return f(HighNoiseModel<D>::from_csv(table, c.get("model.states", 2), act));
    }
    if (type == "constant") return f(constant_model<D>(act));
    throw ConfigError("unknown model.type " + type);
  });
}

inline std::string config_string(const std::vector<int>& x, int q) {
  std::string s;
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (q > 10 && k) s += '.';
    s += std::to_string(x[k]);
  }
  return s;
}

/// Stationary law by iterating the exact kernel from the uniform law.
template <SplitNoiseModel M>
ExactDistribution stationary_by_iteration(const M& m, int side, int max_iter = 100000, double tol = 1e-15) {
  const int n = static_cast<int>(LatticeDomain<M::dim>::torus(side).size());
  ExactDistribution d{m.num_states(), n, {}};
  const std::size_t states = ipow(m.num_states(), n);
  d.p.assign(states, 1.0 / static_cast<double>(states));
  for (int it = 0; it < max_iter; ++it) {
    auto next = apply_kernel(m, side, d.p);
    const double diff = max_abs_diff(next, d.p);
    d.p = std::move(next);
    if (diff < tol) return d;
  }
  throw GuardExceeded("stationary law: no convergence within the iteration cap");
}

template <int D>
ExactDistribution reference_law(const IsingModel<D>& m, const Config&, int side) {
  return gibbs_ising(Carrier::torus<D>(side), m.beta());
}
template <int D>
ExactDistribution reference_law(const ColoringsModel<D>& m, const Config&, int side) {
  return gibbs_colorings(Carrier::torus<D>(side), m.q());
}
template <int D>
ExactDistribution reference_law(const HighNoiseModel<D>& m, const Config& c, int side) {
  const int n = static_cast<int>(LatticeDomain<D>::torus(side).size());
  if (m.num_states() == 1) return ExactDistribution{1, n, {1.0}};
  if (c.str("model.table", "ising") == "ising") return gibbs_ising(Carrier::torus<D>(side), c.get("model.beta", 0.05));
  return stationary_by_iteration(m, side);
}

template <class M>
constexpr bool has_table = std::is_same_v<M, HighNoiseModel<M::dim>>;

// ---- stopping rules from [coding]

template <int D>
WindowSequence<D> make_windows(const Config& c) {
  const std::string kind = c.str("coding.windows", "cone");
  const int delta = c.get("coding.delta", 1);
  if (kind == "cone") return WindowSequence<D>::cone(delta);
  if (kind == "cube") return WindowSequence<D>::cube(delta);
  if (kind == "simple") return WindowSequence<D>::simple();
  throw ConfigError("unknown coding.windows " + kind);
}

struct TauTweak {
  std::optional<int> cap;
  std::optional<Symbol> symbol;
};

template <int D>
StoppingRule<D> make_tau(const Config& c, TauTweak tweak = {}) {
  const std::string kind = c.str("coding.tau", "first_hit");
  const Symbol s0 = tweak.symbol.value_or(c.get<Symbol>("coding.symbol", 1));
  const int cap = tweak.cap.value_or(c.get("coding.cap", -1));
  if (kind == "first_hit") return rules::first_hit(make_windows<D>(c), s0, cap);
  if (kind == "layer_homogeneity") return rules::layer_homogeneity(make_windows<D>(c), s0, cap);
  if (kind == "deterministic") {
    auto r = rules::deterministic<D>(tweak.cap ? *tweak.cap + 1 : c.require<int>("coding.M"));
    if (c.has("coding.windows")) r.windows = make_windows<D>(c);
    return r;
  }
  if (kind == "coalescence") {
    if (c.str("model.type", "ising") != "ising") throw ConfigError("coding.tau = coalescence needs model.type = ising");
    return rules::pca_coalescence(IsingModel<D>(c.get("model.beta", 0.2), c.get("model.activation", 0.5)));
  }
  throw ConfigError("unknown coding.tau " + kind);
}

template <int D>
AlphabetDistribution make_alphabet(const Config& c) {
  if (c.str("coding.tau", "first_hit") == "coalescence")
    return IsingModel<D>(c.get("model.beta", 0.2), c.get("model.activation", 0.5)).noise_alphabet();
  return AlphabetDistribution::from_weights(c.list<double>("coding.alphabet", {1.0, 1.0}));
}

inline UpdateMethod make_method(const Config& c) {
  const std::string m = c.str("coding.method", "A");
  if (m == "A") return UpdateMethod::A;
  if (m == "B") return UpdateMethod::B;
  throw ConfigError("coding.method must be A or B");
}

/// sigma from [coding]; sigma_M = auto means M = 2 ceil(E|B_tau|) confirmed by a second estimate.
template <int D>
StoppingRule<D> make_sigma(const Config& c, const StoppingRule<D>& tau, const SpaceTimeRandomSource<D>& src, Outcome& out,
                           const std::string& tag) {
  const std::string kind = c.str("coding.sigma", "deterministic");
  if (kind == "first_hit")
    return rules::first_hit(WindowSequence<D>::simple(), c.get<Symbol>("coding.sigma_symbol", 0),
                            c.get("coding.sigma_cap", -1));
  if (kind != "deterministic") throw ConfigError("unknown coding.sigma " + kind);
  const std::string ms = c.str("coding.sigma_M", "auto");
  if (ms != "auto") return rules::deterministic<D>(c.get<int>("coding.sigma_M", 1));
  const int samples = c.get("coding.requirement_samples", 2000);
  const int guard = c.get("coding.guard", 1 << 14);
  auto first = estimate_requirement(tau, rules::deterministic<D>(1), src.substream(0x5e1), samples, guard);
  const int M = first.suggested_M();
  if (M > guard)
    throw GuardExceeded("requirement: E|B_tau|=" + fmt(first.window_mean) + " +- " + fmt(first.window_se) +
                        " needs sigma_M=" + fmt(M) + " above coding.guard=" + fmt(guard));
  auto confirm = estimate_requirement(tau, rules::deterministic<D>(M), src.substream(0x5e2), samples, guard);
  out.summary[tag + "window_mean"] = first.window_mean;
  out.summary[tag + "window_se"] = first.window_se;
  out.summary[tag + "sigma_M"] = M;
  out.check(tag + "requirement", confirm.verdict == Verdict::satisfied, Status::statistical,
            "E|B_tau|=" + fmt(confirm.window_mean) + " +- " + fmt(confirm.window_se) + " vs E sigma+1=" + fmt(M) +
                " (" + to_string(confirm.verdict) + ")");
  return rules::deterministic<D>(M);
}

inline std::string join(const std::vector<Symbol>& v) {
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (k) s += ';';
    s += std::to_string(v[k]);
  }
  return s;
}

/// Histogram key of a stopped configuration: stop value and the values in rank order.
inline std::string pattern_key(int t, const std::vector<Symbol>& values) { return std::to_string(t) + ":" + join(values); }

struct Stats {
  double sum = 0, max = 0;
  std::size_t n = 0;
  void add(double x) {
    sum += x;
    max = n ? std::max(max, x) : x;
    ++n;
  }
  double mean() const { return n ? sum / static_cast<double>(n) : 0.0; }
};

template <class K>
std::vector<std::pair<K, std::uint64_t>> sorted(const Histogram<K>& h) {
  std::vector<std::pair<K, std::uint64_t>> v(h.begin(), h.end());
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace detail

// ---- stationarity

inline Outcome stationarity(const Config& c, const Sink& sink) {
  Outcome out;
  const double tol = c.get("stationarity.tolerance", 1e-10);
  const int side = c.get("domain.side", 4);
  const bool exhaustive = c.get("stationarity.exhaustive", false);
  const bool has_beta = c.str("model.type", "ising") != "colorings" && c.str("model.type", "ising") != "constant";
  std::vector<double> betas = has_beta ? c.list<double>("stationarity.betas", {c.get("model.beta", 0.2)})
                                        : std::vector<double>{0.0};
  auto report = sink.csv("stationarity.csv", "beta,method,states,max_abs_diff,argmax_config");
  auto dist = sink.csv("distribution.csv", "beta,config,mu,muP");
  double worst = 0;
  for (std::size_t b = 0; b < betas.size(); ++b) {
    Config cb = c;
    if (has_beta) cb.set("model.beta", fmt(betas[b]));
    detail::with_model(cb, [&](const auto& m) {
      using M = std::decay_t<decltype(m)>;
      const auto mu = detail::reference_law(m, cb, side);
      auto one = [&](const std::string& method, const std::vector<double>& mup) {
        double mx = 0;
        std::size_t arg = 0;
        for (std::size_t k = 0; k < mup.size(); ++k) {
          const double d = std::fabs(mup[k] - mu.p[k]);
          if (d > mx) {
            mx = d;
            arg = k;
          }
        }
        worst = std::max(worst, mx);
        const std::string tag = "beta" + std::to_string(b) + "." + method;
        out.summary[tag + ".max_abs_diff"] = mx;
        report.row(betas[b], method, mu.p.size(), mx, detail::config_string(mu.decode(arg), mu.q));
        out.check("stationary." + tag, mx <= tol, Status::statistical,
                  (has_beta ? "beta=" + fmt(betas[b]) + " " : std::string()) + method + " max|muP-mu|=" + fmt(mx) +
                      " <= " + fmt(tol));
        if (method == "factorised" && dist.enabled())
          for (std::size_t k = 0; k < mu.p.size(); ++k)
            if (mu.p[k] != 0 || mup[k] != 0)
              dist.row(betas[b], detail::config_string(mu.decode(k), mu.q), mu.p[k], mup[k]);
      };
      one("factorised", apply_kernel(m, side, mu.p));
      if constexpr (FiniteNoiseModel<M>) {
        if (exhaustive) one("exhaustive", left_multiply(mu.p, pca_kernel_exhaustive(m, side)));
      } else if (exhaustive) {
        throw ConfigError("stationarity.exhaustive needs a model with a finite noise alphabet");
      }
      return 0;
    });
  }
  out.summary["max_abs_diff"] = worst;
  out.summary["tolerance"] = tol;
  return out;
}

// ---- sample

inline Outcome sample(const Config& c, const Sink& sink) {
  return detail::with_model(c, [&](const auto& m) {
    using M = std::decay_t<decltype(m)>;
    constexpr int D = M::dim;
    Outcome out;
    const int side = c.get("domain.side", 4);
    const auto dom = LatticeDomain<D>::torus(side);
    const std::uint64_t count = c.get<std::uint64_t>("sample.count", 1000);
    const std::uint64_t rows = c.get<std::uint64_t>("sample.rows", count);
    const int window = c.get("sample.window", side);
    const double tol = c.get("sample.tolerance", 0.01);
    const int resamples = c.get("sample.resamples", 1000);
    CftpOptions opt{c.get("sample.guard", 1 << 14), false};

    std::vector<Site<D>> region;
    std::vector<int> marg_sites;
    for (std::size_t x = 0; x < dom.size(); ++x) {
      region.push_back(dom.site(x));
      bool in = true;
      for (int k = 0; k < D; ++k) in = in && dom.site(x)[k] < window;
      if (in) marg_sites.push_back(static_cast<int>(x));
    }
    const auto law = detail::reference_law(m, c, side);
    const auto ref = static_cast<int>(marg_sites.size()) == law.n ? law : law.marginal(marg_sites);

    auto csv = sink.csv("samples.csv", "sample,depth,config");
    SpaceTimeRandomSource<D> base(c.seed());
    Histogram<std::size_t> h;
    detail::Stats depth;
    std::vector<int> y(marg_sites.size());
    for (std::uint64_t k = 0; k < count; ++k) {
      const auto r = cftp_sample(m, dom, region, base.substream(k), opt);
      depth.add(r.total_depth);
      for (std::size_t j = 0; j < marg_sites.size(); ++j) y[j] = r.values[marg_sites[j]];
      ++h[ExactDistribution::encode(y, m.num_states())];
      if (k < rows && csv.enabled()) {
        std::vector<int> x(r.values.begin(), r.values.end());
        csv.row(k, r.total_depth, detail::config_string(x, m.num_states()));
      }
    }
    const double tv = tv_to_exact(h, ref.p);
    const auto band = tv_band_exact(ref.p, count, resamples, c.seed());
    out.summary["samples"] = count;
    out.summary["marginal_sites"] = marg_sites.size();
    out.summary["marginal_states"] = ref.p.size();
    out.summary["mean_depth"] = depth.mean();
    out.summary["max_depth"] = depth.max;
    out.summary["tv"] = tv;
    out.summary["tolerance"] = tol;
    out.summary["band_lo"] = band.lo;
    out.summary["band_hi"] = band.hi;
    out.summary["p_value"] = band.p_value(tv);
    out.check("tv", tv <= tol, Status::statistical, "TV=" + fmt(tv) + " <= " + fmt(tol));
    out.check("band", band.contains(tv), Status::statistical,
              "TV in band [" + fmt(band.lo) + "," + fmt(band.hi) + "]");

    if constexpr (detail::has_table<M>) {
      out.summary["gamma"] = m.gamma();
      if (m.num_states() > 1)
        out.check("high_noise", m.high_noise(), Status::invariant,
                  "gamma=" + fmt(m.gamma()) + " > " + fmt(1.0 - 1.0 / (2.0 * D)));
      // the split gamma_s + (1-gamma) residual and the draw law over u both reproduce each row
      double split = 0, drawn = 0;
      const auto priv = m.private_alphabet();
      for (std::size_t xi = 0; xi < m.rows(); ++xi)
        for (int s = 0; s < m.num_states(); ++s) {
          split = std::max(split, std::fabs(m.gamma_s(s) + (1 - m.gamma()) * m.residual(xi, s) - m.kernel(xi, s)));
          double p = 0;
          for (const auto& [a, w] : priv) p += m.draw(xi, a.u) == s ? w : 0.0;
          drawn = std::max(drawn, std::fabs(p - m.kernel(xi, s)));
        }
      out.summary["multigamma_split_err"] = split;
      out.summary["multigamma_draw_err"] = drawn;
      out.check("multigamma_identity", split <= 1e-12 && drawn <= 1e-12, Status::invariant,
                "max row error split=" + fmt(split) + " draw=" + fmt(drawn) + " <= 1e-12");
    }
    return out;
  });
}

// ---- coding (lockstep invariant suite)

inline Outcome coding(const Config& c, const Sink& sink) {
  Outcome out;
  const auto dims = c.list<int>("coding.dim", {1});
  const auto radii = c.list<int>("coding.radius", std::vector<int>(dims.size(), 40));
  if (radii.size() != dims.size()) throw ConfigError("coding.radius needs one entry per coding.dim");
  const int steps = c.get("coding.steps", 200);
  const int seeds = c.get("coding.seeds", 10);
  const int every = c.get("coding.exhaustive_every", 1);
  const int report = c.get("coding.report_radius", 3);
  auto dump = sink.csv("coding.csv", "dim,seed,vertex,N,tau,radius,certified,values");
  std::size_t total = 0;
  for (std::size_t di = 0; di < dims.size(); ++di) {
    detail::for_dim(dims[di], [&]<int D>() {
      const std::string tag = "d" + std::to_string(D) + ".";
      SpaceTimeRandomSource<D> base(c.seed(), detail::make_alphabet<D>(c));
      const auto tau = detail::make_tau<D>(c);
      const auto sigma = detail::make_sigma<D>(c, tau, base, out, tag);
      CodingOptions opt;
      opt.method = detail::make_method(c);
      opt.exhaustive = every > 0;
      opt.exhaustive_every = std::max(1, every);
      std::size_t viol = 0;
      std::string first;
      detail::Stats N, R, sat_share;
      for (int s = 0; s < seeds; ++s) {
        LockstepCoding<D> eng(tau, sigma, base.substream(static_cast<std::uint64_t>(s)), radii[di], opt);
        eng.run(steps);
        viol += eng.violation_count();
        if (first.empty() && !eng.violations().empty())
          first = "seed " + std::to_string(s) + " step " + std::to_string(eng.violations()[0].step) + ": " +
                  eng.violations()[0].what;
        sat_share.add(1.0 - static_cast<double>(eng.unsatisfied()) / static_cast<double>(eng.domain().size()));
        for (const auto& v : l1_ball<D>(std::min(report, radii[di]))) {
          auto o = eng.output(v);
          if (o.N >= 0) {
            N.add(o.N);
            R.add(o.radius);
          }
          dump.row(D, s, finicode::detail::fmt_site<D>(v), o.N, o.tau, o.radius, o.certified ? 1 : 0, detail::join(o.values));
        }
      }
      total += viol;
      out.summary[tag + "seeds"] = seeds;
      out.summary[tag + "steps"] = steps;
      out.summary[tag + "rho"] = radii[di];
      out.summary[tag + "violations"] = viol;
      out.summary[tag + "satisfied_share"] = sat_share.mean();
      out.summary[tag + "mean_N"] = N.mean();
      out.summary[tag + "max_N"] = N.max;
      out.summary[tag + "mean_R"] = R.mean();
      out.summary[tag + "max_R"] = R.max;
      out.check(tag + "invariants", viol == 0, Status::invariant,
                "d=" + std::to_string(D) + " " + std::to_string(seeds) + " seeds x " + std::to_string(steps) +
                    " steps: " + std::to_string(viol) + " violations" + (first.empty() ? "" : " (" + first + ")"));
      return 0;
    });
  }
  out.summary["violations"] = total;
  return out;
}

// ---- equivalence

namespace detail {

template <int D>
void equivalence_patterns(const Config& c, const Sink& sink, Outcome& out) {
  const std::string tag = "d" + std::to_string(D) + ".";
  const int runs = c.get("equivalence.runs", 10000);
  const int resamples = c.get("equivalence.resamples", 1000);
  const int guard = c.get("coding.guard", 1 << 14);
  SpaceTimeRandomSource<D> base(c.seed(), make_alphabet<D>(c));
  const auto tau = make_tau<D>(c);
  const auto sigma = make_sigma<D>(c, tau, base, out, tag);
  const std::string control = c.str("equivalence.control", "cap");
  TauTweak tw;
  if (control == "cap") tw.cap = c.get("equivalence.control_cap", c.get("coding.cap", 2) + 1);
  else if (control == "symbol") tw.symbol = c.get<Symbol>("equivalence.control_symbol", 0);
  else if (control != "none") throw ConfigError("equivalence.control must be cap, symbol or none");
  const auto tau_control = make_tau<D>(c, tw);
  const Site<D> o{};

  auto engine = [&](const StoppingRule<D>& t, UpdateMethod m, const SpaceTimeRandomSource<D>& s) {
    LazyCoding<D> eng(t, sigma, s, m);
    auto r = eng.solve(o, guard);
    return pattern_key(r.tau, r.values);
  };
  auto direct = [&](const SpaceTimeRandomSource<D>& s) {
    auto r = sample_stopped(tau, s, o, guard);
    return pattern_key(r.t, r.values);
  };
  Histogram<std::string> hA, hB, hD, hC;
  for (int k = 0; k < runs; ++k) {
    const auto kk = static_cast<std::uint64_t>(k);
    ++hA[engine(tau, UpdateMethod::A, base.substream(4 * kk))];
    ++hD[direct(base.substream(4 * kk + 1))];
    ++hB[engine(tau, UpdateMethod::B, base.substream(4 * kk + 2))];
    if (control != "none") ++hC[engine(tau_control, UpdateMethod::A, base.substream(4 * kk + 3))];
  }
  auto compare = [&](const std::string& name, const Histogram<std::string>& a, const Histogram<std::string>& b,
                     bool expect_inside) {
    const double tv = tv_empirical(a, b);
    const auto band = tv_band_two_sample(a, b, resamples, c.seed());
    out.summary[tag + name + ".tv"] = tv;
    out.summary[tag + name + ".band_hi"] = band.hi;
    out.summary[tag + name + ".p_value"] = band.p_value(tv);
    const bool inside = band.contains(tv);
    out.check(tag + name, inside == expect_inside, Status::statistical,
              name + " TV=" + fmt(tv) + (inside ? " inside" : " outside") + " band [0," + fmt(band.hi) + "]" +
                  (expect_inside ? "" : " (must fall outside)"));
  };
  compare("engine_vs_direct", hA, hD, true);
  compare("A_vs_B", hA, hB, true);
  if (control != "none") compare("control", hC, hD, false);
  out.summary[tag + "outcomes"] = hA.size();

  if (c.get("equivalence.point_mass", true)) {
    // every symbol is s0: both sides are one deterministic pattern
    std::vector<double> w(std::max<std::size_t>(base.distribution().size(), c.get<Symbol>("coding.symbol", 1) + 1), 0.0);
    w[c.get<Symbol>("coding.symbol", 1)] = 1.0;
    auto pm = base.with_distribution(AlphabetDistribution::from_weights(w));
    Histogram<std::string> a, d;
    for (int k = 0; k < 200; ++k) {
      ++a[engine(tau, UpdateMethod::A, pm.substream(2 * static_cast<std::uint64_t>(k)))];
      ++d[direct(pm.substream(2 * static_cast<std::uint64_t>(k) + 1))];
    }
    const double tv = tv_empirical(a, d);
    out.summary[tag + "point_mass.tv"] = tv;
    out.check(tag + "point_mass", tv == 0.0, Status::statistical, "point-mass TV=" + fmt(tv) + " == 0");
  }

  auto csv = sink.csv("equivalence_d" + std::to_string(D) + ".csv", "pattern,engine_A,engine_B,direct,control");
  if (csv.enabled()) {
    std::set<std::string> keys;
    for (const auto* h : {&hA, &hB, &hD, &hC})
      for (const auto& [k, _] : *h) keys.insert(k);
    auto get = [](const Histogram<std::string>& h, const std::string& k) {
      auto it = h.find(k);
      return it == h.end() ? std::uint64_t{0} : it->second;
    };
    for (const auto& k : keys) csv.row(k, get(hA, k), get(hB, k), get(hD, k), get(hC, k));
  }
}

/// Single-site spin of the coding output under the coalescence rule against CFTP at the origin.
template <int D>
void equivalence_spin(const Config& c, const Sink& sink, Outcome& out) {
  const std::string tag = "d" + std::to_string(D) + ".";
  const int runs = c.get("equivalence.runs", 10000);
  const int resamples = c.get("equivalence.resamples", 1000);
  const int guard = c.get("coding.guard", 1 << 14);
  const double tol = c.get("equivalence.tolerance", 0.02);
  const double budget = c.get("equivalence.budget_seconds", 3600.0);
  if (c.str("coding.tau", "first_hit") != "coalescence") throw ConfigError("equivalence.target = spin needs coding.tau = coalescence");
  IsingModel<D> m(c.get("model.beta", 0.2), c.get("model.activation", 0.5));
  SpaceTimeRandomSource<D> base(c.seed(), m.noise_alphabet());
  const auto tau = make_tau<D>(c);
  const auto sigma = make_sigma<D>(c, tau, base, out, tag);
  const Site<D> o{};

  Histogram<int> hE, hC;
  auto csv = sink.csv("spin_d" + std::to_string(D) + ".csv", "run,engine_spin,N0,tau,cftp_spin");
  const auto start = std::chrono::steady_clock::now();
  const auto deadline = start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                    std::chrono::duration<double>(budget));
  int done = 0;
  std::size_t work = 0;
  std::string stop;
  OrderedPrefix<D> order(tau.windows);
  for (int k = 0; k < runs; ++k) {
    const auto kk = static_cast<std::uint64_t>(k);
    LazyCoding<D> eng(tau, sigma, base.substream(2 * kk));
    eng.set_deadline(deadline);
    VertexOutput<D> r;
    try {
      r = eng.solve(o, guard);
    } catch (const GuardExceeded& e) {
      work += eng.work();
      stop = e.what();
      break;
    }
    work += eng.work();
    RankedView<D> view(order, r.values);
    const int spin = IsingModel<D>::spin(rules::coalesced_value(m, view, r.tau));
    auto cf = cftp_sample(m, LatticeDomain<D>::window(0), {o}, base.substream(2 * kk + 1),
                          CftpOptions{c.get("equivalence.cftp_guard", 1 << 14), false});
    const int cspin = IsingModel<D>::spin(cf.values[0]);
    ++hE[spin];
    ++hC[cspin];
    csv.row(k, spin, r.N, r.tau, cspin);
    ++done;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.summary[tag + "runs_completed"] = done;
  out.summary[tag + "runs_requested"] = runs;
  out.summary[tag + "engine_work"] = work;
  std::cerr << "spin equivalence: " << done << "/" << runs << " runs in " << secs << " s\n";
  if (done < runs) {
    out.check(tag + "spin_runs", false, Status::guard,
              std::to_string(done) + "/" + std::to_string(runs) + " runs within " + fmt(budget) + " s (" + stop + ")");
    return;
  }
  const double tv = tv_empirical(hE, hC);
  const auto band = tv_band_two_sample(hE, hC, resamples, c.seed());
  out.summary[tag + "spin.tv"] = tv;
  out.summary[tag + "spin.band_hi"] = band.hi;
  out.summary[tag + "spin.p_value"] = band.p_value(tv);
  out.summary[tag + "engine_plus_share"] = static_cast<double>(hE[1]) / runs;
  out.summary[tag + "cftp_plus_share"] = static_cast<double>(hC[1]) / runs;
  out.check(tag + "spin_tv", tv <= tol, Status::statistical, "spin TV=" + fmt(tv) + " <= " + fmt(tol));
  out.check(tag + "spin_band", band.contains(tv), Status::statistical,
            "spin TV in band [0," + fmt(band.hi) + "]");
}

}  // namespace detail

inline Outcome equivalence(const Config& c, const Sink& sink) {
  Outcome out;
  const std::string target = c.str("equivalence.target", "pattern");
  for (int d : c.list<int>("coding.dim", {1}))
    detail::for_dim(d, [&]<int D>() {
      if (target == "pattern") detail::equivalence_patterns<D>(c, sink, out);
      else if (target == "spin") detail::equivalence_spin<D>(c, sink, out);
      else throw ConfigError("equivalence.target must be pattern or spin");
      return 0;
    });
  return out;
}

// ---- locality

namespace detail {

/// Everything the origin's simulator knows after n steps, flattened.
template <int D>
std::vector<long long> local_record(LazyCoding<D>& eng, int n, int zh) {
  std::vector<long long> rec;
  const Site<D> o{};
  for (int t = 0; t <= n; ++t) {
    const auto s = eng.state(o, t);
    rec.insert(rec.end(), {static_cast<long long>(s.k), static_cast<long long>(s.I), static_cast<long long>(s.rank),
                           static_cast<long long>(s.T), static_cast<long long>(s.step_case),
                           static_cast<long long>(eng.satisfied(o, t))});
  }
  for (const auto& w : l1_ball<D>(eng.delta() * n))
    for (int j = 0; j <= zh; ++j) {
      auto z = eng.z(w, j, n);
      rec.push_back(z ? static_cast<long long>(*z) : -1);
    }
  return rec;
}

}  // namespace detail

inline Outcome locality(const Config& c, const Sink& sink) {
  Outcome out;
  const int trials = c.get("locality.trials", 50);
  auto csv = sink.csv("locality.csv", "dim,n,trial,footprint,bound,outside_identical,inside_changed");
  for (int d : c.list<int>("coding.dim", {1}))
    for (int n : c.list<int>("locality.steps", {10, 25}))
      detail::for_dim(d, [&]<int D>() {
        const std::string tag = "d" + std::to_string(D) + ".n" + std::to_string(n) + ".";
        SpaceTimeRandomSource<D> base(c.seed(), detail::make_alphabet<D>(c));
        const auto tau = detail::make_tau<D>(c);
        const auto sigma = detail::make_sigma<D>(c, tau, base, out, tag);
        const auto method = detail::make_method(c);
        const int delta = coding_delta(tau.windows);
        const int zh = c.get("locality.z_height", n);
        const int inner = c.get("locality.inner_radius", delta);
        const long long bound = certify_locality(n, delta);
        if (bound > INT_MAX) throw ConfigError("locality radius overflows");
        int identical = 0, changed = 0, within = 0, worst_fp = 0;
        for (int k = 0; k < trials; ++k) {
          const auto src = base.substream(static_cast<std::uint64_t>(k));
          LazyCoding<D> a(tau, sigma, src, method);
          a.track(Site<D>{});
          const auto ra = detail::local_record(a, n, zh);
          const int fp = a.footprint();
          worst_fp = std::max(worst_fp, fp);
          LazyCoding<D> b(tau, sigma, src.perturb_outside(Site<D>{}, static_cast<int>(bound), 1000 + k), method);
          const bool same = detail::local_record(b, n, zh) == ra;
          LazyCoding<D> e(tau, sigma, src.perturb_inside(Site<D>{}, inner, 2000 + k), method);
          const bool diff = detail::local_record(e, n, zh) != ra;
          identical += same;
          changed += diff;
          within += fp <= bound;
          csv.row(D, n, k, fp, bound, same ? 1 : 0, diff ? 1 : 0);
        }
        out.summary[tag + "identical"] = identical;
        out.summary[tag + "changed"] = changed;
        out.summary[tag + "max_footprint"] = worst_fp;
        out.summary[tag + "bound"] = bound;
        const std::string where = "d=" + std::to_string(D) + " n=" + std::to_string(n) + ": ";
        out.check(tag + "outside", identical == trials, Status::invariant,
                  where + std::to_string(identical) + "/" + std::to_string(trials) + " identical outside radius " +
                      std::to_string(bound));
        out.check(tag + "footprint", within == trials, Status::invariant,
                  where + "max footprint " + std::to_string(worst_fp) + " <= " + std::to_string(bound));
        out.check(tag + "inside", changed >= 1, Status::statistical,
                  where + std::to_string(changed) + " trials changed by perturbing radius " + std::to_string(inner));
        return 0;
      });
  return out;
}

// ---- tails

inline Outcome tails(const Config& c, const Sink& sink) {
  Outcome out;
  const int samples = c.get("tails.samples", 10000);
  const int runs = c.get("tails.runs", 10000);
  const int guard = c.get("tails.guard", 1 << 14);
  const double r2_min = c.get("tails.r2_min", 0.9);
  const double s_max = c.get("tails.survival_max", 0.02);

  // coalescence depth at the origin
  std::vector<int> taus;
  detail::with_model(c, [&](const auto& m) {
    using M = std::decay_t<decltype(m)>;
    constexpr int D = M::dim;
    SpaceTimeRandomSource<D> base(c.seed());
    for (int k = 0; k < samples; ++k)
      taus.push_back(coalescence_time(m, Site<D>{}, base.substream(static_cast<std::uint64_t>(k)), guard));
    return 0;
  });
  const auto ft = fit_tails(taus);
  const double q99 = ft.quantile(0.99);
  const double s_emp = q99 < ft.survival.size() ? ft.survival[static_cast<std::size_t>(q99)] : 0.0;
  const double s_fit = std::exp(ft.exponential.intercept + ft.exponential.slope * q99);
  {
    auto csv = sink.csv("tails_tau.csv", "n,survival");
    for (std::size_t k = 0; k < ft.survival.size(); ++k) csv.row(k, ft.survival[k]);
  }
  out.summary["tau.samples"] = samples;
  out.summary["tau.slope"] = ft.exponential.slope;
  out.summary["tau.intercept"] = ft.exponential.intercept;
  out.summary["tau.r2"] = ft.exponential.r2;
  out.summary["tau.q99"] = q99;
  out.summary["tau.survival_q99_empirical"] = s_emp;
  out.summary["tau.survival_q99_fitted"] = s_fit;
  out.check("tau_fit", ft.exponential.applicable && ft.exponential.r2 >= r2_min, Status::statistical,
            "exponential fit R2=" + fmt(ft.exponential.r2) + " >= " + fmt(r2_min));
  out.check("tau_q99", s_fit < s_max, Status::statistical,
            "fitted survival at q99=" + fmt(q99) + " is " + fmt(s_fit) + " < " + fmt(s_max) + " (empirical " +
                fmt(s_emp) + ")");

  // satisfaction step of the origin and its measured coding radius
  for (int d : c.list<int>("coding.dim", {1}))
    detail::for_dim(d, [&]<int D>() {
      const std::string tag = "N0.d" + std::to_string(D) + ".";
      SpaceTimeRandomSource<D> base(c.seed(), detail::make_alphabet<D>(c));
      base = base.substream(0x7a11);
      const auto tau = detail::make_tau<D>(c);
      const auto sigma = detail::make_sigma<D>(c, tau, base, out, tag);
      const auto method = detail::make_method(c);
      const int delta = coding_delta(tau.windows);
      std::vector<int> n0;
      int over = 0, unfinished = 0;
      auto rcsv = sink.csv("tails_R_d" + std::to_string(D) + ".csv", "run,N0,footprint,certified_R");
      for (int k = 0; k < runs; ++k) {
        LazyCoding<D> eng(tau, sigma, base.substream(static_cast<std::uint64_t>(k)), method);
        eng.track(Site<D>{});
        try {
          auto r = eng.solve(Site<D>{}, guard);
          n0.push_back(r.N);
          over += r.footprint > certify_locality(r.N, delta);
          rcsv.row(k, r.N, r.footprint, r.radius);
        } catch (const GuardExceeded&) {
          ++unfinished;
        }
      }
      const auto fn = fit_tails(n0);
      {
        auto csv = sink.csv("tails_N0_d" + std::to_string(D) + ".csv", "n,survival");
        for (std::size_t k = 0; k < fn.survival.size(); ++k) csv.row(k, fn.survival[k]);
      }
      bool monotone = true;
      for (std::size_t k = 1; k < fn.survival.size(); ++k) monotone = monotone && fn.survival[k] <= fn.survival[k - 1];
      const bool reaches = unfinished == 0 && !fn.survival.empty() && fn.survival.back() == 0.0;
      out.summary[tag + "runs"] = runs;
      out.summary[tag + "max"] = fn.survival.empty() ? 0 : static_cast<int>(fn.survival.size()) - 1;
      out.summary[tag + "stretched_exponent"] = fn.stretched.slope;
      out.summary[tag + "stretched_log_C"] = fn.stretched.intercept;
      out.summary[tag + "stretched_r2"] = fn.stretched.r2;
      out.summary[tag + "radius_violations"] = over;
      out.check(tag + "monotone", monotone, Status::statistical, "survival of N0 non-increasing");
      out.check(tag + "reaches_zero", reaches, Status::guard,
                "survival reaches 0 within guard " + std::to_string(guard) + " (" + std::to_string(unfinished) +
                    " unfinished)");
      out.check(tag + "radius", over == 0, Status::invariant,
                std::to_string(over) + " runs with R > 5*" + std::to_string(delta) + "*N0^2");
      std::cerr << "N0 d=" << D << ": stretched exponent " << fn.stretched.slope << " (informational)\n";
      return 0;
    });
  return out;
}

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> v{"sample", "stationarity", "coding", "equivalence", "locality", "tails"};
  return v;
}

/// Runs one subcommand; guard and invariant exceptions become failed checks.
inline Outcome run(const std::string& cmd, const Config& c, const Sink& sink) {
  c.check_known(known_keys());
  Outcome out;
  try {
    if (cmd == "sample") out = sample(c, sink);
    else if (cmd == "stationarity") out = stationarity(c, sink);
    else if (cmd == "coding") out = coding(c, sink);
    else if (cmd == "equivalence") out = equivalence(c, sink);
    else if (cmd == "locality") out = locality(c, sink);
    else if (cmd == "tails") out = tails(c, sink);
    else throw ConfigError("unknown subcommand " + cmd);
  } catch (const GuardExceeded& e) {
    out.check("guard", false, Status::guard, e.what());
  } catch (const InvariantViolation& e) {
    out.check("invariant", false, Status::invariant, e.what());
  }
  json s = json::object();
  s["command"] = cmd;
  s["seed"] = c.seed();
  s["config_hash"] = c.hash();
  for (auto& [k, v] : out.summary.items()) s[k] = v;
  s["exit_code"] = out.exit_code();
  out.summary = std::move(s);
  sink.summary(out.summary);
  return out;
}

}  // namespace finicode::experiments
