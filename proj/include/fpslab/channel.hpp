#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fpslab/numerics.hpp"
#include "fpslab/sketch.hpp"

namespace fpslab {

struct ChannelSpec {
  // K: reals one sender may put on the air per round.
  std::size_t subcarriers = 1;
  double noise_std = 0.0;
  std::uint64_t seed = 0;
  // Server-to-client broadcast noise; 0 keeps the downlink exact.
  double downlink_noise_std = 0.0;

  void validate() const;
};

// Reals put on the air, tallied per round by the orchestrator.
struct TransmissionCounter {
  std::uint64_t total_reals = 0;
  std::uint64_t max_reals_per_sender = 0;
  bool over_budget = false;

  void record(std::uint64_t reals, std::size_t budget);
  void reset() { *this = TransmissionCounter{}; }
};

// A sender's coordinate transmission. Slots are strictly increasing; a slot
// may carry the value 0 and still occupies a subcarrier.
struct SlotPayload {
  std::vector<Index> slots;
  std::vector<double> values;

  std::size_t size() const { return slots.size(); }
};

// (1/M) sum_m sketches[m] with one N(0, sigma^2) draw added to every cell.
// The noise stream depends only on (spec.seed, round).
CountSketch transmit_sketches(std::span<const CountSketch> sketches,
                              const ChannelSpec& spec, std::uint64_t round,
                              TransmissionCounter* counter = nullptr);

// Coordinate-wise over-the-air average on the union of the senders' slots: a
// sender that did not use a slot contributes 0 to it. Each slot of the union
// receives one noise draw. Returns the union slots (ascending) and values.
// budget_exempt lifts the K cap (the full-vector baseline) but still counts.
SlotPayload transmit_coordinates(std::span<const SlotPayload> payloads,
                                 std::uint64_t dim, const ChannelSpec& spec,
                                 std::uint64_t round, bool budget_exempt = false,
                                 TransmissionCounter* counter = nullptr);

// Adds downlink noise to a broadcast seen by one client. No-op when the
// downlink std is 0.
void downlink_noise(std::span<double> values, const ChannelSpec& spec,
                    std::uint64_t round, std::size_t client);

}  // namespace fpslab
