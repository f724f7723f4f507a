#pragma once

// Mamba-1 layer as a 24-Einsum cascade.

#include <sstream>
#include <string>

#include "ir.hpp"
#include "text_format.hpp"

namespace einfuse {

enum class Phase { prefill, decode };

inline const char* phase_name(Phase p) { return p == Phase::prefill ? "prefill" : "decode"; }

struct ParamSet {
  std::int64_t B = 64, I = 2048, E = 1024, D = 2048, N = 16, R = 64, W = 4, L = 48;
  Phase phase = Phase::prefill;
  double eps = 1e-5;

  static ParamSet preset(const std::string& name) {
    ParamSet p;
    if (name == "mamba-370m") return p;
    if (name == "mamba-2.8b") {
      p.E = 2560, p.D = 5120, p.R = 160, p.L = 64;
      return p;
    }
    if (name == "tiny") {
      p.B = 2, p.I = 8, p.E = 8, p.D = 16, p.N = 4, p.R = 4, p.W = 4, p.L = 1;
      return p;
    }
    throw IrError("unknown preset " + name);
  }

  // decode runs one token per step
  ParamSet with_phase(Phase ph) const {
    ParamSet p = *this;
    p.phase = ph;
    if (ph == Phase::decode) p.I = 1;
    return p;
  }

  std::vector<std::string> problems() const {
    std::vector<std::string> v;
    const std::pair<const char*, std::int64_t> dims[] = {{"B", B}, {"I", I}, {"E", E}, {"D", D},
                                                         {"N", N}, {"R", R}, {"W", W}, {"L", L}};
    for (auto [n, x] : dims)
      if (x < 1) v.push_back(std::string(n) + " must be >= 1");
    if (phase == Phase::decode && I != 1) v.push_back("decode requires I = 1");
    if (!(eps > 0)) v.push_back("eps must be positive");
    return v;
  }

  // "B=2,I=8,preset=mamba-2.8b,phase=decode"
  static ParamSet parse(const std::string& spec, const ParamSet& base) {
    ParamSet p = base;
    std::stringstream ss(spec);
    std::string item;
    std::vector<std::pair<std::string, std::string>> kv;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      auto eq = item.find('=');
      if (eq == std::string::npos) throw IrError("expected key=value in '" + item + "'");
      kv.push_back({item.substr(0, eq), item.substr(eq + 1)});
    }
    // preset first so explicit keys override it
    for (auto& [k, v] : kv)
      if (k == "preset") p = preset(v);
    for (auto& [k, v] : kv) {
      if (k == "preset") continue;
      if (k == "phase") {
        if (v == "prefill") p.phase = Phase::prefill;
        else if (v == "decode") p.phase = Phase::decode;
        else throw IrError("unknown phase " + v);
        continue;
      }
      if (k == "eps") {
        p.eps = std::stod(v);
        continue;
      }
      std::int64_t x = std::stoll(v);
      if (k == "B") p.B = x;
      else if (k == "I") p.I = x;
      else if (k == "E") p.E = x;
      else if (k == "D") p.D = x;
      else if (k == "N") p.N = x;
      else if (k == "R") p.R = x;
      else if (k == "W") p.W = x;
      else if (k == "L") p.L = x;
      else throw IrError("unknown parameter " + k);
    }
    if (p.phase == Phase::decode) p.I = 1;
    return p;
  }
  static ParamSet parse(const std::string& spec) { return parse(spec, ParamSet{}); }
};

inline std::string mamba1_text(const ParamSet& p) {
  std::ostringstream os;
  os << "# Mamba-1 layer\n";
  os << "rank B(" << p.B << ")\n";
  os << "rank I(" << p.I << ") generational step=1 stop=" << p.I << "\n";
  os << "rank E(" << p.E << ")\nrank D(" << p.D << ")\nrank N(" << p.N << ")\nrank R(" << p.R << ")\nrank W(" << p.W
     << ")\n";
  auto t = [&](const char* name, std::initializer_list<const char*> rs) {
    os << "tensor " << name << " :";
    bool first = true;
    for (auto* r : rs) {
      std::int64_t e = r[0] == 'B' ? p.B : r[0] == 'I' ? p.I : r[0] == 'E' ? p.E : r[0] == 'D' ? p.D
                     : r[0] == 'N' ? p.N : r[0] == 'R' ? p.R : p.W;
      os << (first ? " " : ", ") << r << "(" << e << ")";
      first = false;
    }
    os << "\n";
  };
  t("IN", {"B", "I", "E"});
  t("X", {"B", "I", "E"});
  t("SQ", {"B", "I", "E"});
  t("NUM", {"B", "I"});
  t("MEAN", {"B", "I"});
  t("SQEX", {"B", "I"});
  t("G", {"E"});
  t("NEX", {"B", "I", "E"});
  t("WIN", {"E", "D"});
  t("TX", {"B", "I", "D"});
  t("WRES", {"E", "D"});
  t("RX", {"B", "I", "D"});
  t("WC", {"D", "W"});
  t("TTX", {"B", "I", "D"});
  t("LEX", {"B", "I", "D"});
  t("WB", {"D", "N"});
  t("XB", {"B", "I", "N"});
  t("WXC", {"D", "N"});
  t("XC", {"B", "I", "N"});
  t("WDT1", {"D", "R"});
  t("TTDT", {"B", "I", "R"});
  t("WDT2", {"R", "D"});
  t("DTP", {"B", "I", "D"});
  t("BDT", {"D"});
  t("DELTA", {"B", "I", "D"});
  t("A", {"D", "N"});
  t("ABAR", {"B", "I", "D", "N"});
  t("BBAR", {"B", "I", "D", "N"});
  t("BX", {"B", "I", "D", "N"});
  t("HH", {"B", "I", "D", "N"});
  t("H0", {"B", "D", "N"});
  t("H", {"B", "I", "D", "N"});
  t("S", {"B", "I", "D"});
  t("DSKIP", {"D"});
  t("SD", {"B", "I", "D"});
  t("Y", {"B", "I", "D"});
  t("WOUT", {"D", "E"});
  t("O", {"B", "I", "E"});
  os << "einsum 1: X[b,i,e] = IN[b,i,e]\n"
     << "einsum 2: SQ[b,i,e] = square(X[b,i,e])\n"
     << "einsum 3: NUM[b,i] += SQ[b,i,e]\n"
     << "einsum 4: MEAN[b,i] = NUM[b,i] / " << format_number(static_cast<double>(p.E)) << "\n"
     << "einsum 5: SQEX[b,i] = rsqrt(MEAN[b,i] + " << format_number(p.eps) << ")\n"
     << "einsum 6: NEX[b,i,e] = X[b,i,e] * SQEX[b,i] * G[e]\n"
     << "einsum 7: TX[b,i,d] += NEX[b,i,e] * WIN[e,d]\n"
     << "einsum 8: RX[b,i,d] += NEX[b,i,e] * WRES[e,d]\n"
     << "einsum 9: TTX[b,i,d] += TX[b,i-w,d] * WC[d,w]\n"
     << "einsum 10: LEX[b,i,d] = silu(TTX[b,i,d])\n"
     << "einsum 11: XB[b,i,n] += LEX[b,i,d] * WB[d,n]\n"
     << "einsum 12: XC[b,i,n] += LEX[b,i,d] * WXC[d,n]\n"
     << "einsum 13: TTDT[b,i,r] += LEX[b,i,d] * WDT1[d,r]\n"
     << "einsum 14: DTP[b,i,d] += TTDT[b,i,r] * WDT2[r,d]\n"
     << "einsum 15: DELTA[b,i,d] = softplus(DTP[b,i,d] + BDT[d])\n"
     << "einsum 16: ABAR[b,i,d,n] = exp(DELTA[b,i,d] * A[d,n])\n"
     << "einsum 17: BBAR[b,i,d,n] = DELTA[b,i,d] * XB[b,i,n]\n"
     << "einsum 18: BX[b,i,d,n] = BBAR[b,i,d,n] * LEX[b,i,d]\n"
     << "einsum 19: HH[b,i,d,n] = ABAR[b,i,d,n] * H[b,i-1,d,n]\n"
     << "init: HH[b,0,d,n] = ABAR[b,0,d,n] * H0[b,d,n]\n"
     << "einsum 20: H[b,i,d,n] = HH[b,i,d,n] + BX[b,i,d,n]\n"
     << "einsum 21: S[b,i,d] += H[b,i,d,n] * XC[b,i,n]\n"
     << "einsum 22: SD[b,i,d] = S[b,i,d] + DSKIP[d] * LEX[b,i,d]\n"
     << "einsum 23: Y[b,i,d] = SD[b,i,d] * silu(RX[b,i,d])\n"
     << "einsum 24: O[b,i,e] += Y[b,i,d] * WOUT[d,e]\n";
  return os.str();
}

inline Cascade build_mamba1(const ParamSet& p) {
  auto probs = p.problems();
  if (!probs.empty()) throw IrError("invalid parameters: " + probs.front());
  auto r = parse(mamba1_text(p));
  if (!r.ok()) {
    std::string msg = "internal: Mamba cascade failed to build";
    for (auto& d : r.diagnostics) msg += "\n  " + to_string(d);
    throw IrError(msg);
  }
  return *r.cascade;
}

// Einsums whose outputs matter for the layer result and the interpreter oracle
inline const std::vector<std::string>& mamba1_checked_outputs() {
  static const std::vector<std::string> v{"H", "S", "Y", "O"};
  return v;
}

} // namespace einfuse
