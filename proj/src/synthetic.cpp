#include "peel/synthetic.hpp"

#include <sstream>

#include "peel/error.hpp"
#include "peel/rng.hpp"

namespace peel {

PlantedData MakePlantedInteractions(const PlantedSpec& spec) {
  Require(spec.clusters >= 1 && spec.users >= spec.clusters && spec.items >= spec.clusters,
          ErrorKind::kConfig, "planted data needs at least one user and item per community");
  Require(spec.p_within >= 0.0 && spec.p_within <= 1.0 && spec.p_across >= 0.0 &&
              spec.p_across <= 1.0,
          ErrorKind::kConfig, "interaction probabilities must be in [0, 1]");
  PlantedData out;
  out.user_community.resize(spec.users);
  out.item_community.resize(spec.items);
  for (std::size_t u = 0; u < spec.users; ++u) out.user_community[u] = u % spec.clusters;
  for (std::size_t v = 0; v < spec.items; ++v) out.item_community[v] = v % spec.clusters;

  Rng rng(spec.seed);
  std::ostringstream text;
  for (std::size_t u = 0; u < spec.users; ++u) {
    for (std::size_t v = 0; v < spec.items; ++v) {
      const double p =
          out.user_community[u] == out.item_community[v] ? spec.p_within : spec.p_across;
      if (rng.Uniform01() < p) text << u << '\t' << v << '\n';
    }
  }
  out.text = text.str();
  return out;
}

}  // namespace peel
