#pragma once

// Synthetic pedigree generation for studies that need family structure but
// have no field data: founders, then per-generation crossing (or selfing)
// with fixed family sizes. Deterministic given the seed.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "pedigree.hpp"
#include "rng.hpp"

namespace odsel {

struct SimPedigreeOptions {
  int founders = 10;
  int generations = 1;  // 1 = founders only
  int families = 1;     // matings per generation beyond the first
  int family_size = 1;  // offspring per mating
  bool selfing = false; // one parent per mating instead of two
  std::uint64_t seed = 1;
};

struct SimPedigree {
  Pedigree ped;
  std::vector<std::vector<std::string>> generation;  // ids per generation
  std::map<std::string, std::string> family;         // offspring id -> family label
};

inline SimPedigree simulate_pedigree(const SimPedigreeOptions& opt) {
  if (opt.founders < 1 || opt.generations < 1 || opt.families < 1 ||
      opt.family_size < 1)
    throw std::runtime_error("pedigree simulation sizes must be >= 1");
  if (!opt.selfing && opt.founders < 2 && opt.generations > 1)
    throw std::runtime_error("crossing needs at least 2 founders");

  Rng rng(opt.seed);
  std::vector<std::string> ids, sires, dams;
  SimPedigree out;
  out.generation.resize(std::size_t(opt.generations));

  for (int f = 0; f < opt.founders; ++f) {
    std::string id = "F" + std::to_string(f + 1);
    ids.push_back(id);
    sires.push_back("");
    dams.push_back("");
    out.generation[0].push_back(id);
  }

  for (int g = 1; g < opt.generations; ++g) {
    const auto& prev = out.generation[std::size_t(g - 1)];
    for (int fam = 0; fam < opt.families; ++fam) {
      const std::string famlab =
          "G" + std::to_string(g + 1) + "F" + std::to_string(fam + 1);
      if (!opt.selfing && prev.size() < 2)
        throw std::runtime_error("crossing needs >= 2 parents in generation " +
                                 std::to_string(g));
      std::size_t pa = std::size_t(rng.below(prev.size()));
      std::size_t pb = pa;
      if (!opt.selfing)
        while (pb == pa) pb = std::size_t(rng.below(prev.size()));
      for (int k = 0; k < opt.family_size; ++k) {
        std::string id = famlab + "N" + std::to_string(k + 1);
        ids.push_back(id);
        sires.push_back(prev[pa]);
        dams.push_back(prev[pb]);
        out.generation[std::size_t(g)].push_back(id);
        out.family[id] = famlab;
      }
    }
  }

  out.ped = Pedigree::from_records(std::move(ids), std::move(sires),
                                   std::move(dams));
  return out;
}

}  // namespace odsel
