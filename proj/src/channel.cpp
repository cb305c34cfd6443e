#include "fpslab/channel.hpp"

#include <algorithm>
#include <string>

#include "fpslab/errors.hpp"

namespace fpslab {
namespace {

constexpr std::uint64_t kTagUplink = 0xc4a1;
constexpr std::uint64_t kTagDownlink = 0xc4a2;

}  // namespace

void ChannelSpec::validate() const {
  if (subcarriers < 1) throw ConfigError("channel: subcarriers must be >= 1");
  if (!(noise_std >= 0.0)) throw ConfigError("channel: noise std must be >= 0");
  if (!(downlink_noise_std >= 0.0)) {
    throw ConfigError("channel: downlink noise std must be >= 0");
  }
}

void TransmissionCounter::record(std::uint64_t reals, std::size_t budget) {
  total_reals += reals;
  max_reals_per_sender = std::max(max_reals_per_sender, reals);
  if (reals > budget) over_budget = true;
}

CountSketch transmit_sketches(std::span<const CountSketch> sketches,
                              const ChannelSpec& spec, std::uint64_t round,
                              TransmissionCounter* counter) {
  spec.validate();
  if (sketches.empty()) throw ChannelError("channel: no senders");
  const SketchShape& shape = sketches.front().shape();
  for (const auto& s : sketches) {
    if (!(s.shape() == shape)) throw ChannelError("channel: sketch shapes differ");
  }
  if (shape.cells() > spec.subcarriers) {
    throw ChannelError("channel: sketch of " + std::to_string(shape.cells()) +
                       " cells exceeds " + std::to_string(spec.subcarriers) +
                       " subcarriers");
  }
  if (counter) {
    for (std::size_t m = 0; m < sketches.size(); ++m) {
      counter->record(shape.cells(), spec.subcarriers);
    }
  }
  std::vector<double> weights(sketches.size(), 1.0 / static_cast<double>(sketches.size()));
  CountSketch out = merge_scaled(sketches, weights);
  if (spec.noise_std > 0.0) {
    RngStream rng(spec.seed, stream_key({kTagUplink, round}));
    for (double& cell : out.mutable_table()) cell += spec.noise_std * rng.normal();
  }
  return out;
}

SlotPayload transmit_coordinates(std::span<const SlotPayload> payloads,
                                 std::uint64_t dim, const ChannelSpec& spec,
                                 std::uint64_t round, bool budget_exempt,
                                 TransmissionCounter* counter) {
  spec.validate();
  if (payloads.empty()) throw ChannelError("channel: no senders");
  std::vector<Index> slots;
  for (const auto& p : payloads) {
    if (p.slots.size() != p.values.size()) {
      throw ChannelError("channel: slot/value length mismatch");
    }
    if (!budget_exempt && p.size() > spec.subcarriers) {
      throw ChannelError("channel: payload of " + std::to_string(p.size()) +
                         " reals exceeds " + std::to_string(spec.subcarriers) +
                         " subcarriers");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p.slots[i] >= dim || (i > 0 && p.slots[i] <= p.slots[i - 1])) {
        throw ChannelError("channel: slots must be increasing and below dim");
      }
    }
    if (counter) counter->record(p.size(), spec.subcarriers);
    slots.insert(slots.end(), p.slots.begin(), p.slots.end());
  }
  std::sort(slots.begin(), slots.end());
  slots.erase(std::unique(slots.begin(), slots.end()), slots.end());

  SlotPayload out;
  out.slots = slots;
  out.values.assign(slots.size(), 0.0);
  const double inv_m = 1.0 / static_cast<double>(payloads.size());
  // Senders are folded in index order so the sum is reproducible.
  for (const auto& p : payloads) {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      while (out.slots[pos] != p.slots[i]) ++pos;
      out.values[pos] += inv_m * p.values[i];
    }
  }
  if (spec.noise_std > 0.0) {
    RngStream rng(spec.seed, stream_key({kTagUplink, round}));
    for (double& v : out.values) v += spec.noise_std * rng.normal();
  }
  return out;
}

void downlink_noise(std::span<double> values, const ChannelSpec& spec,
                    std::uint64_t round, std::size_t client) {
  if (spec.downlink_noise_std == 0.0) return;
  RngStream rng(spec.seed, stream_key({kTagDownlink, round, client}));
  for (double& v : values) v += spec.downlink_noise_std * rng.normal();
}

}  // namespace fpslab
