#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfsm/links.hpp"

namespace mfsm {

enum class ColKind : std::uint8_t { intercept, continuous, categorical, interaction };

struct PresetColumn {
  ColKind kind = ColKind::intercept;
  int parent_i = -1, parent_j = -1;  // interaction parents (column indices)
};

enum class Preset : std::uint8_t {
  intercept_only,
  fixed_variability,
  regressed,
  fixed_regressed,
  interaction,
};

inline const char* preset_name(Preset p) {
  switch (p) {
    case Preset::intercept_only: return "intercept_only";
    case Preset::fixed_variability: return "fixed_variability";
    case Preset::regressed: return "regressed";
    case Preset::fixed_regressed: return "fixed_regressed";
    case Preset::interaction: return "interaction";
  }
  throw std::invalid_argument("unknown preset code");
}

inline Preset parse_preset(const std::string& s) {
  for (auto p : {Preset::intercept_only, Preset::fixed_variability,
                 Preset::regressed, Preset::fixed_regressed,
                 Preset::interaction})
    if (s == preset_name(p)) return p;
  throw std::invalid_argument("unknown preset: " + s);
}

// Pinned design layout and mask for one benchmark configuration. Rows follow
// param_names(family) order; columns are intercept, then u1 (continuous),
// u2 (categorical), and optionally u1*u2.
struct PresetSpec {
  Preset id;
  int R;
  std::vector<PresetColumn> columns;       // size R
  std::vector<std::array<int, 6>> mask_rows;  // size R
};

inline PresetSpec preset_spec(Preset p, Family f) {
  if (f == Family::gauss) {
    if (p != Preset::intercept_only)
      throw std::invalid_argument("gauss family only supports intercept_only");
    return {p, 1, {{ColKind::intercept}}, {{1, 0, 0, 0, 0, 0}}};
  }

  const std::vector<PresetColumn> main_cols = {
      {ColKind::intercept}, {ColKind::continuous}, {ColKind::categorical}};
  const std::vector<PresetColumn> inter_cols = {
      {ColKind::intercept},
      {ColKind::continuous},
      {ColKind::categorical},
      {ColKind::interaction, 1, 2}};

  const std::array<int, 6> all = {1, 1, 1, 1, 1, 1};
  const std::array<int, 6> no_var = {1, 1, 1, 1, 0, 0};

  // Which parameters receive u1/u2 slopes in the two regressed presets.
  std::array<int, 6> slope{};
  switch (f) {
    case Family::ddm: slope = {1, 1, 1, 0, 0, 0}; break;  // drift, bound, start
    case Family::rdm: slope = {0, 1, 1, 0, 0, 0}; break;  // drift_diff, bound
    case Family::cdm: slope = {1, 0, 1, 0, 0, 0}; break;  // drift, bound
    case Family::gauss: break;
  }

  switch (p) {
    case Preset::intercept_only:
      return {p, 1, {{ColKind::intercept}}, {all}};
    case Preset::fixed_variability:
      return {p, 1, {{ColKind::intercept}}, {no_var}};
    case Preset::regressed:
      return {p, 3, main_cols, {all, slope, slope}};
    case Preset::fixed_regressed:
      return {p, 3, main_cols, {no_var, slope, slope}};
    case Preset::interaction:
      return {p, 4, inter_cols,
              {all, {1, 1, 1, 1, 1, 0}, {1, 1, 1, 1, 0, 0}, {1, 1, 1, 0, 0, 0}}};
  }
  throw std::invalid_argument("unknown preset code");
}

inline const std::vector<Preset>& all_presets() {
  static const std::vector<Preset> v = {
      Preset::intercept_only, Preset::fixed_variability, Preset::regressed,
      Preset::fixed_regressed, Preset::interaction};
  return v;
}

}  // namespace mfsm
