#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace fbridge {

/// Philox4x32-10 block function. Pure: the same counter and key always give
/// the same four words.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

std::uint64_t splitmix64(std::uint64_t x);

/// Counter-based random stream keyed by (seed, stream id).
///
/// The 128-bit Philox counter holds (block index, stream id) and the key is
/// the seed, so a stream is fully described by three integers and never
/// shares state with another stream. Parallel work gives each unit of work
/// its own stream id, which keeps results independent of scheduling.
class RngStream {
 public:
  RngStream() = default;
  RngStream(std::uint64_t seed, std::uint64_t stream_id, std::uint64_t counter = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  /// Index of the next Philox block to be generated.
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1).
  double uniform();
  /// Standard normal via Box-Muller; draws come in pairs from one block.
  double normal();
  void fill_normal(std::span<double> out);

  /// Child stream whose id is a hash of (this id, child). Children with
  /// distinct `child` values are distinct streams.
  RngStream split(std::uint64_t child) const;

 private:
  void refill();

  std::uint64_t seed_ = 0;
  std::uint64_t stream_id_ = 0;
  std::uint64_t counter_ = 0;
  std::array<std::uint64_t, 2> words_{};
  int words_left_ = 0;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

/// Conventional stream-id namespaces so that unrelated consumers of one seed
/// never collide.
enum class StreamPurpose : std::uint64_t {
  dataset = 1,
  init = 2,
  training = 3,
  sampling = 4,
  evaluation = 5,
  oracle = 6,
  finetune = 7,
};

RngStream make_stream(std::uint64_t seed, StreamPurpose purpose, std::uint64_t index = 0);

}  // namespace fbridge
