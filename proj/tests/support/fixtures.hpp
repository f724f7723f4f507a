#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "einfuse/merge.hpp"
#include "einfuse/mamba.hpp"
#include "einfuse/text_format.hpp"

#ifndef EINFUSE_CASCADE_DIR
#error "EINFUSE_CASCADE_DIR must point at the sample cascades"
#endif

namespace fixtures {

inline std::string read_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw einfuse::IrError("cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// one of cascades/*.ein
inline einfuse::Cascade sample(const std::string& name) {
  auto r = einfuse::parse(read_file(std::string(EINFUSE_CASCADE_DIR) + "/" + name + ".ein"));
  if (!r.ok()) throw einfuse::IrError("sample " + name + " does not parse");
  return *r.cascade;
}

inline einfuse::Cascade merged_mamba(const einfuse::ParamSet& p) {
  return einfuse::merge_shared_inputs(einfuse::build_mamba1(p), einfuse::mamba1_merge_sets()).cascade;
}

inline einfuse::Cascade merged_mamba(const std::string& preset = "mamba-370m") {
  return merged_mamba(einfuse::ParamSet::preset(preset));
}

} // namespace fixtures
