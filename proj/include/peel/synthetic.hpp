#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace peel {

// Users and items are dealt round-robin into `clusters` planted communities.
// Each (user, item) pair interacts independently with probability
// `p_within` inside a community and `p_across` between communities.
struct PlantedSpec {
  std::size_t users = 400;
  std::size_t items = 400;
  std::size_t clusters = 4;
  double p_within = 0.5;
  double p_across = 0.02;
  std::uint64_t seed = 7;
};

struct PlantedData {
  std::string text;                            // user<TAB>item lines
  std::vector<std::uint32_t> user_community;   // by generated user index
  std::vector<std::uint32_t> item_community;   // by generated item index
};

PlantedData MakePlantedInteractions(const PlantedSpec& spec);

}  // namespace peel
