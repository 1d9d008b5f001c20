#include "peel/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "peel/binary_io.hpp"
#include "peel/error.hpp"
#include "peel/log.hpp"

namespace peel {
namespace {

struct RawRecord {
  std::string user;
  std::string item;
  std::int64_t timestamp = 0;
};

bool AllDigits(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

// Numeric ids order numerically, everything else lexicographically after them.
bool IdLess(const std::string& a, const std::string& b) {
  const bool da = AllDigits(a), db = AllDigits(b);
  if (da != db) return da;
  if (da && a.size() != b.size()) return a.size() < b.size();
  return a < b;
}

std::vector<std::string> SplitTabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

std::vector<RawRecord> ParseRecords(const std::string& text, bool& has_timestamps) {
  std::vector<RawRecord> records;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool all_timestamped = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto fields = SplitTabs(line);
    const auto where = "line " + std::to_string(line_no) + ": ";
    Require(fields.size() == 2 || fields.size() == 3, ErrorKind::kParse,
            where + "expected user<TAB>item[<TAB>timestamp]");
    Require(!fields[0].empty() && !fields[1].empty(), ErrorKind::kParse, where + "empty id");
    RawRecord rec{fields[0], fields[1], 0};
    if (fields.size() == 3) {
      std::size_t pos = 0;
      try {
        rec.timestamp = std::stoll(fields[2], &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      Require(pos == fields[2].size() && pos > 0, ErrorKind::kParse,
              where + "timestamp is not an integer");
    } else {
      all_timestamped = false;
    }
    records.push_back(std::move(rec));
  }
  has_timestamps = all_timestamped && !records.empty();
  return records;
}

std::vector<std::string> SortedUnique(std::vector<std::string> names) {
  std::sort(names.begin(), names.end(), IdLess);
  names.erase(std::unique(names.begin(), names.end()), names.end());
  return names;
}

void MoveUntrainedItemsToTrain(InteractionLog& log) {
  std::vector<bool> item_trained(log.num_items, false);
  std::vector<bool> user_trained(log.num_users, false);
  for (const auto& x : log.interactions) {
    if (x.role == Role::kTrain) item_trained[x.item] = user_trained[x.user] = true;
  }
  for (auto& x : log.interactions) {
    if (x.role != Role::kTrain && (!item_trained[x.item] || !user_trained[x.user])) {
      x.role = Role::kTrain;
      item_trained[x.item] = user_trained[x.user] = true;
    }
  }
}

}  // namespace

InteractionLog FilterInteractionsText(const std::string& text, std::size_t min_interactions) {
  Require(min_interactions >= 1, ErrorKind::kConfig, "min_interactions must be >= 1");
  bool has_timestamps = false;
  std::vector<RawRecord> records = ParseRecords(text, has_timestamps);

  // Dedup on (user, item), keeping the earliest timestamp.
  std::map<std::pair<std::string, std::string>, std::int64_t> pairs;
  for (const auto& r : records) {
    auto [it, inserted] = pairs.emplace(std::make_pair(r.user, r.item), r.timestamp);
    if (!inserted) it->second = std::min(it->second, r.timestamp);
  }

  std::unordered_map<std::string, std::size_t> user_count, item_count;
  for (const auto& [key, ts] : pairs) {
    ++user_count[key.first];
    ++item_count[key.second];
  }
  bool changed = true;
  while (changed) {
    changed = false;
    for (auto it = pairs.begin(); it != pairs.end();) {
      const auto& [u, i] = it->first;
      if (user_count[u] < min_interactions || item_count[i] < min_interactions) {
        --user_count[u];
        --item_count[i];
        it = pairs.erase(it);
        changed = true;
      } else {
        ++it;
      }
    }
  }
  Require(!pairs.empty(), ErrorKind::kEmptyDataset,
          "no interactions survive filtering at min_interactions=" +
              std::to_string(min_interactions));

  std::vector<std::string> users, items;
  for (const auto& [key, ts] : pairs) {
    users.push_back(key.first);
    items.push_back(key.second);
  }
  InteractionLog log;
  log.user_names = SortedUnique(std::move(users));
  log.item_names = SortedUnique(std::move(items));
  log.num_users = log.user_names.size();
  log.num_items = log.item_names.size();
  log.has_timestamps = has_timestamps;

  std::unordered_map<std::string, UserId> user_index;
  std::unordered_map<std::string, ItemId> item_index;
  for (std::size_t i = 0; i < log.num_users; ++i) user_index[log.user_names[i]] = static_cast<UserId>(i);
  for (std::size_t i = 0; i < log.num_items; ++i) item_index[log.item_names[i]] = static_cast<ItemId>(i);
  log.interactions.reserve(pairs.size());
  for (const auto& [key, ts] : pairs) {
    log.interactions.push_back({user_index.at(key.first), item_index.at(key.second),
                                Role::kUnassigned, ts});
  }
  std::sort(log.interactions.begin(), log.interactions.end(),
            [](const Interaction& a, const Interaction& b) {
              return a.user != b.user ? a.user < b.user : a.item < b.item;
            });
  log.RebuildAdjacency();
  return log;
}

InteractionLog LoadAndFilter(const std::string& path, std::size_t min_interactions) {
  return FilterInteractionsText(ReadFileText(path), min_interactions);
}

InteractionLog SplitRoles(InteractionLog log, const std::array<double, 3>& ratios,
                          std::uint64_t seed, SplitMode mode) {
  const double sum = ratios[0] + ratios[1] + ratios[2];
  Require(std::abs(sum - 1.0) < 1e-9 && ratios[0] >= 0 && ratios[1] >= 0 && ratios[2] >= 0,
          ErrorKind::kConfig, "split ratios must be non-negative and sum to 1");
  const Rng root(seed);

  auto order_chunk = [&](std::vector<std::size_t>& idx, Rng rng) {
    // Canonical order first so the result is independent of storage order.
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      const auto& x = log.interactions[a];
      const auto& y = log.interactions[b];
      if (log.has_timestamps && x.timestamp != y.timestamp) return x.timestamp < y.timestamp;
      return x.user != y.user ? x.user < y.user : x.item < y.item;
    });
    if (!log.has_timestamps) rng.Shuffle(idx.begin(), idx.end());
  };
  auto assign = [&](const std::vector<std::size_t>& idx) {
    const std::size_t n = idx.size();
    std::size_t val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios[1]));
    std::size_t test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios[2]));
    while (val + test >= n && test > 0) --test;
    while (val + test >= n && val > 0) --val;
    const std::size_t train = n - val - test;
    for (std::size_t k = 0; k < n; ++k) {
      auto& x = log.interactions[idx[k]];
      x.role = k < train ? Role::kTrain : (k < train + val ? Role::kValidation : Role::kTest);
    }
  };

  if (mode == SplitMode::kPerUser) {
    std::vector<std::vector<std::size_t>> by_user(log.num_users);
    for (std::size_t k = 0; k < log.interactions.size(); ++k) {
      by_user[log.interactions[k].user].push_back(k);
    }
    for (std::size_t u = 0; u < log.num_users; ++u) {
      order_chunk(by_user[u], root.Split(u));
      assign(by_user[u]);
    }
  } else {
    std::vector<std::size_t> all(log.interactions.size());
    std::iota(all.begin(), all.end(), 0);
    order_chunk(all, root.Split(0));
    assign(all);
  }
  MoveUntrainedItemsToTrain(log);
  log.RebuildAdjacency();
  return log;
}

GroupingPlan SegmentItemsByPopularity(const InteractionLog& log, std::size_t num_groups) {
  Require(num_groups >= 1 && num_groups <= log.num_items, ErrorKind::kConfig,
          "item group count " + std::to_string(num_groups) + " must be in [1, |V|=" +
              std::to_string(log.num_items) + "]");
  GroupingPlan plan;
  plan.popularity = log.TrainPopularity();
  std::vector<ItemId> order(log.num_items);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](ItemId a, ItemId b) {
    return plan.popularity[a] > plan.popularity[b];
  });
  std::size_t offset = 0;
  for (std::size_t size : EqualSegmentSizes(log.num_items, num_groups)) {
    plan.item_groups.emplace_back(order.begin() + offset, order.begin() + offset + size);
    offset += size;
  }
  return plan;
}

GroupingPlan SegmentItemsRandomly(const InteractionLog& log, std::size_t num_groups,
                                  std::uint64_t seed) {
  GroupingPlan plan = SegmentItemsByPopularity(log, num_groups);
  std::vector<ItemId> order(log.num_items);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.Shuffle(order.begin(), order.end());
  std::size_t offset = 0;
  for (auto& group : plan.item_groups) {
    std::copy_n(order.begin() + offset, group.size(), group.begin());
    offset += group.size();
  }
  return plan;
}

BprSampler::BprSampler(std::vector<std::pair<UserId, ItemId>> positives,
                       std::vector<std::vector<ItemId>> exclusions, std::size_t num_items)
    : positives_(std::move(positives)), exclusions_(std::move(exclusions)), num_items_(num_items) {
  for (auto& e : exclusions_) {
    std::sort(e.begin(), e.end());
    e.erase(std::unique(e.begin(), e.end()), e.end());
  }
}

BprSampler BprSampler::ForTrain(const InteractionLog& log) {
  std::vector<std::pair<UserId, ItemId>> positives;
  for (const auto& x : log.interactions) {
    if (x.role == Role::kTrain) positives.emplace_back(x.user, x.item);
  }
  std::vector<std::vector<ItemId>> exclusions(log.num_users);
  for (UserId u = 0; u < log.num_users; ++u) exclusions[u] = log.UserTrainItems(u);
  return BprSampler(std::move(positives), std::move(exclusions), log.num_items);
}

BprSampler BprSampler::ForUsers(const InteractionLog& log, const std::vector<UserId>& users,
                                Role role) {
  std::vector<bool> member(log.num_users, false);
  for (UserId u : users) member.at(u) = true;
  std::vector<std::pair<UserId, ItemId>> positives;
  std::vector<std::vector<ItemId>> exclusions(log.num_users);
  for (const auto& x : log.interactions) {
    if (!member[x.user]) continue;
    if (x.role == role) positives.emplace_back(x.user, x.item);
    if (x.role == Role::kTrain || (role != Role::kTrain && x.role == Role::kValidation)) {
      exclusions[x.user].push_back(x.item);
    }
  }
  return BprSampler(std::move(positives), std::move(exclusions), log.num_items);
}

std::vector<BprTriple> BprSampler::Sample(std::size_t batch_size, Rng& rng) const {
  std::vector<BprTriple> batch;
  if (batch_size == 0) return batch;
  Require(!positives_.empty(), ErrorKind::kEmptyDataset, "no positive interactions to sample");
  batch.reserve(batch_size);
  std::size_t saturated_draws = 0;
  while (batch.size() < batch_size) {
    const auto [user, item] = positives_[rng.UniformIndex(positives_.size())];
    const auto& excluded = exclusions_[user];
    if (excluded.size() >= num_items_) {
      LogWarning("user " + std::to_string(user) + " interacted with every item; resampling");
      Require(++saturated_draws < 1000 + 100 * batch_size, ErrorKind::kEmptyDataset,
              "no user has a negative item to sample");
      continue;
    }
    ItemId negative;
    do {
      negative = static_cast<ItemId>(rng.UniformIndex(num_items_));
    } while (std::binary_search(excluded.begin(), excluded.end(), negative));
    batch.push_back({user, item, negative});
  }
  return batch;
}

std::vector<BprTriple> SampleBprBatch(const InteractionLog& log, std::size_t batch_size,
                                      std::uint64_t seed) {
  Rng rng(seed);
  return BprSampler::ForTrain(log).Sample(batch_size, rng);
}

void SaveLogSnapshot(const InteractionLog& log, const std::string& path) {
  ByteWriter w;
  w.Magic("PLOG");
  w.U32(1);
  w.U32(static_cast<std::uint32_t>(log.num_users));
  w.U32(static_cast<std::uint32_t>(log.num_items));
  w.U32(log.has_timestamps ? 1 : 0);
  for (const auto& n : log.user_names) w.Str(n);
  for (const auto& n : log.item_names) w.Str(n);
  w.U64(log.interactions.size());
  for (const auto& x : log.interactions) {
    w.U32(x.user);
    w.U32(x.item);
    w.U32(static_cast<std::uint32_t>(x.role));
    w.U64(static_cast<std::uint64_t>(x.timestamp));
  }
  WriteFileBytes(path, w.bytes());
}

InteractionLog LoadLogSnapshot(const std::string& path) {
  const auto bytes = ReadFileBytes(path);
  ByteReader r(bytes);
  r.ExpectMagic("PLOG");
  Require(r.U32() == 1, ErrorKind::kFormat, "unsupported log snapshot version");
  InteractionLog log;
  log.num_users = r.U32();
  log.num_items = r.U32();
  log.has_timestamps = r.U32() != 0;
  for (std::size_t i = 0; i < log.num_users; ++i) log.user_names.push_back(r.Str());
  for (std::size_t i = 0; i < log.num_items; ++i) log.item_names.push_back(r.Str());
  const std::uint64_t n = r.U64();
  log.interactions.resize(n);
  for (auto& x : log.interactions) {
    x.user = r.U32();
    x.item = r.U32();
    const std::uint32_t role = r.U32();
    Require(role <= 3, ErrorKind::kFormat, "bad role tag in log snapshot");
    x.role = static_cast<Role>(role);
    x.timestamp = static_cast<std::int64_t>(r.U64());
    Require(x.user < log.num_users && x.item < log.num_items, ErrorKind::kFormat,
            "id out of range in log snapshot");
  }
  log.RebuildAdjacency();
  return log;
}

std::string LogStatsSummary(const InteractionLog& log) {
  std::ostringstream out;
  const double density = static_cast<double>(log.interactions.size()) /
                         (static_cast<double>(log.num_users) * static_cast<double>(log.num_items));
  out << "users\t" << log.num_users << "\n"
      << "items\t" << log.num_items << "\n"
      << "interactions\t" << log.interactions.size() << "\n"
      << "train\t" << log.CountRole(Role::kTrain) << "\n"
      << "validation\t" << log.CountRole(Role::kValidation) << "\n"
      << "test\t" << log.CountRole(Role::kTest) << "\n"
      << "density\t" << density << "\n";
  return out.str();
}

}  // namespace peel
