#pragma once

// Long-range context: a per-video store of detached concurrent-action maps,
// windowed reads around a clip, and the Or/And composition of the window
// with the current clip's map.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gcm/autodiff.hpp"
#include "gcm/errors.hpp"
#include "gcm/nn.hpp"
#include "gcm/nodes.hpp"

namespace gcm {

struct BankEntry {
  std::vector<double> map;
  std::uint64_t version = 0;
};

/// One slot of a window read; `offset` is relative to the reading clip and
/// never zero.
struct BankSlot {
  std::int64_t offset = 0;
  std::int64_t timestamp = 0;
  bool available = false;
  std::uint64_t version = 0;
  std::vector<double> map;  // zeros when unavailable
};

/// Snapshot of the 2T slots around a clip, ordered -T..-1, +1..+T.
struct BankView {
  std::int64_t center = 0;
  std::size_t d_map = 0;
  std::vector<BankSlot> slots;

  std::size_t available_count() const {
    std::size_t n = 0;
    for (const auto& s : slots) n += s.available ? 1 : 0;
    return n;
  }
};

/// Thread-safe map (video_id, clip_time) -> detached scoring map. Reads copy
/// values out under a shared lock, so a view never changes after it is taken.
class MemoryBank {
 public:
  MemoryBank(std::size_t d_map, int t_window) : d_map_(d_map), t_window_(t_window) {
    if (d_map == 0) throw ArgumentError("MemoryBank: d_map must be positive");
    if (t_window < 0) throw ArgumentError("MemoryBank: t_window must be >= 0");
  }

  std::size_t d_map() const { return d_map_; }
  int t_window() const { return t_window_; }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return store_.size();
  }

  void write(const std::string& video_id, std::int64_t clip_time, std::span<const double> map) {
    if (map.size() != d_map_) {
      throw DimensionError("MemoryBank::write: map has " + std::to_string(map.size()) + " values, expected " +
                           std::to_string(d_map_));
    }
    for (double v : map)
      if (!std::isfinite(v)) throw NumericError("MemoryBank::write: non-finite map value");
    std::unique_lock lock(mutex_);
    auto& entry = store_[{video_id, clip_time}];
    entry.map.assign(map.begin(), map.end());
    ++entry.version;
  }

  /// Stores a detached copy of `map`'s values.
  void write(const std::string& video_id, std::int64_t clip_time, const ad::Value& map) {
    write(video_id, clip_time, map.data());
  }

  std::optional<BankEntry> lookup(const std::string& video_id, std::int64_t clip_time) const {
    std::shared_lock lock(mutex_);
    auto it = store_.find({video_id, clip_time});
    if (it == store_.end()) return std::nullopt;
    return it->second;
  }

  BankView read_window(const std::string& video_id, std::int64_t clip_time) const {
    BankView view;
    view.center = clip_time;
    view.d_map = d_map_;
    view.slots.reserve(static_cast<std::size_t>(2 * t_window_));
    std::shared_lock lock(mutex_);
    for (std::int64_t offset = -t_window_; offset <= t_window_; ++offset) {
      if (offset == 0) continue;
      BankSlot slot;
      slot.offset = offset;
      slot.timestamp = clip_time + offset;
      auto it = store_.find({video_id, slot.timestamp});
      if (it != store_.end()) {
        slot.available = true;
        slot.version = it->second.version;
        slot.map = it->second.map;
      } else {
        slot.map.assign(d_map_, 0.0);
      }
      view.slots.push_back(std::move(slot));
    }
    return view;
  }

  void clear() {
    std::unique_lock lock(mutex_);
    store_.clear();
  }

  /// Binary layout, little-endian:
  ///   "GCMBANK1" | u32 format version | u64 d_map | i64 t_window | u64 entry_count
  ///   per entry: u32 id length | id bytes | i64 clip_time | u64 version | d_map x f64
  /// Entries are written in (video_id, clip_time) order and the doubles are
  /// the raw IEEE-754 values, so save -> load -> save is byte-identical.
  std::string serialize() const {
    std::ostringstream out(std::ios::binary);
    out.write(kMagic, 8);
    put<std::uint32_t>(out, kFormatVersion);
    put<std::uint64_t>(out, d_map_);
    put<std::int64_t>(out, t_window_);
    std::shared_lock lock(mutex_);
    put<std::uint64_t>(out, store_.size());
    for (const auto& [key, entry] : store_) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(key.first.size()));
      out.write(key.first.data(), static_cast<std::streamsize>(key.first.size()));
      put<std::int64_t>(out, key.second);
      put<std::uint64_t>(out, entry.version);
      for (double v : entry.map) put<double>(out, v);
    }
    return out.str();
  }

  static MemoryBank deserialize(const std::string& bytes) {
    std::istringstream in(bytes, std::ios::binary);
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw ParseError("bank file: bad magic");
    if (get<std::uint32_t>(in) != kFormatVersion) throw ParseError("bank file: unsupported version");
    const auto d_map = get<std::uint64_t>(in);
    const auto t_window = get<std::int64_t>(in);
    const auto count = get<std::uint64_t>(in);
    if (d_map == 0 || d_map > (1u << 24) || t_window < 0) throw ParseError("bank file: bad header");
    MemoryBank bank(d_map, static_cast<int>(t_window));
    for (std::uint64_t e = 0; e < count; ++e) {
      const auto len = get<std::uint32_t>(in);
      std::string id(len, '\0');
      if (!in.read(id.data(), len)) throw ParseError("bank file: truncated entry " + std::to_string(e));
      const auto t = get<std::int64_t>(in);
      BankEntry entry;
      entry.version = get<std::uint64_t>(in);
      entry.map.resize(d_map);
      for (double& v : entry.map) v = get<double>(in);
      bank.store_[{id, t}] = std::move(entry);
    }
    if (in.peek() != std::char_traits<char>::eof()) throw ParseError("bank file: trailing bytes");
    return bank;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write bank file '" + path + "'");
    const auto bytes = serialize();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + path + "'");
  }

  static MemoryBank load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open bank file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize(ss.str());
  }

  MemoryBank(MemoryBank&& other) noexcept
      : d_map_(other.d_map_), t_window_(other.t_window_), store_(std::move(other.store_)) {}

 private:
  static constexpr char kMagic[9] = "GCMBANK1";
  static constexpr std::uint32_t kFormatVersion = 1;
  static_assert(std::endian::native == std::endian::little, "bank format assumes a little-endian host");

  template <class T>
  static void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  template <class T>
  static T get(std::istream& in) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ParseError("bank file: truncated");
    return v;
  }

  std::size_t d_map_;
  int t_window_;
  mutable std::shared_mutex mutex_;
  std::map<std::pair<std::string, std::int64_t>, BankEntry> store_;
};

struct LrciRecord {
  std::vector<std::int64_t> timestamps;
  std::vector<double> lambdas;
  std::vector<std::uint8_t> mask;
  int argmax = -1;  // slot index, -1 when the window is empty
};

struct LrciResult {
  Value output;  // S_A* (d_map)
  Value context; // S_L (d_map)
  LrciRecord record;
};

/// S_L = Or over the window's available slot maps (constants, no gradient
/// reaches the bank); S_A* = And(current, S_L). An empty or fully masked
/// window gives S_L = 0.
inline LrciResult lrci_compose(const Value& current, const BankView& view, const nn::Mlp2& scorer,
                               const nn::Mlp2& composer) {
  const std::size_t d = current.size();
  if (current.rank() != 1 || view.d_map != d) {
    throw DimensionError("lrci_compose: current map width " + std::to_string(d) + " vs bank width " +
                         std::to_string(view.d_map));
  }
  LrciResult r;
  const std::size_t n = view.slots.size();
  r.record.timestamps.reserve(n);
  r.record.mask.reserve(n);
  std::vector<double> rows;
  rows.reserve(n * d);
  for (const auto& s : view.slots) {
    r.record.timestamps.push_back(s.timestamp);
    r.record.mask.push_back(s.available ? 1 : 0);
    rows.insert(rows.end(), s.map.begin(), s.map.end());
  }
  if (n == 0) {
    r.context = Value::zeros({d});
  } else {
    const Value slots = Value::constant({n, d}, std::move(rows));
    OrResult sel = or_select(slots, r.record.mask, scorer);
    r.context = sel.output;
    r.record.lambdas.assign(sel.lambdas.data().begin(), sel.lambdas.data().end());
    r.record.argmax = sel.argmax;
  }
  r.output = and_compose({current, r.context}, composer);
  return r;
}

}  // namespace gcm
