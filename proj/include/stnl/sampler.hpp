#pragma once

#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "stnl/rng.hpp"
#include "stnl/tensor.hpp"

namespace stnl {

/// Frame sequences grouped by identity. Each sequence is a [C, L, H, W]
/// tensor with an optional camera label.
template <typename T>
struct TrackDataset {
  struct Sequence {
    Tensor<T> frames;  // [C, L, H, W]
    int camera = 0;
  };
  std::vector<std::vector<Sequence>> identities;

  std::size_t n_identities() const { return identities.size(); }
};

struct SamplerConfig {
  std::size_t p = 32;          // identities per batch
  std::size_t k = 4;           // tracks per identity
  std::size_t track_len = 8;   // frames per track
  std::size_t crop_window = 64;  // consecutive-frame window a track is drawn from
  std::size_t spatial_jitter = 0;  // max |dx|,|dy| of the random shift, zero-filled
};

inline void validate_sampler_config(const SamplerConfig& cfg) {
  if (cfg.p < 2) throw std::invalid_argument("sampler: p must be >= 2");
  if (cfg.k < 2) throw std::invalid_argument("sampler: k must be >= 2");
  if (cfg.track_len < 1) throw std::invalid_argument("sampler: track_len must be >= 1");
  if (cfg.crop_window < cfg.track_len || cfg.crop_window % cfg.track_len != 0) {
    throw std::invalid_argument("sampler: crop_window (" + std::to_string(cfg.crop_window) +
                                ") must be a positive multiple of track_len (" +
                                std::to_string(cfg.track_len) + ")");
  }
}

template <typename T>
struct TrackBatch {
  Tensor<T> tracks;         // [P*K, C, track_len, H, W]
  std::vector<int> labels;  // identity index per track
};

namespace detail {

/// Copies one frame shifted by (dy, dx), zero-filling uncovered pixels.
template <typename T>
void copy_frame_shifted(const T* src, T* dst, std::size_t h, std::size_t w, long dy, long dx) {
  for (std::size_t y = 0; y < h; ++y) {
    const long sy = static_cast<long>(y) - dy;
    for (std::size_t x = 0; x < w; ++x) {
      const long sx = static_cast<long>(x) - dx;
      const bool inside = sy >= 0 && sy < static_cast<long>(h) && sx >= 0 && sx < static_cast<long>(w);
      dst[y * w + x] = inside ? src[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)]
                              : T(0);
    }
  }
}

/// Frame indices of one sampled track: a window of `window` consecutive
/// frames, thinned to every (window/track_len)-th frame at a random offset.
/// Sequences shorter than the window wrap around (looped sampling).
inline std::vector<std::size_t> sample_track_indices(std::size_t seq_len, std::size_t track_len,
                                                     std::size_t window, Rng& rng) {
  const std::size_t stride = window / track_len;
  std::size_t start;
  bool looped = false;
  if (seq_len >= window) {
    start = static_cast<std::size_t>(rng.uniform_int(seq_len - window + 1));
  } else {
    start = static_cast<std::size_t>(rng.uniform_int(seq_len));
    looped = true;
  }
  const std::size_t offset = static_cast<std::size_t>(rng.uniform_int(stride));
  std::vector<std::size_t> idx(track_len);
  for (std::size_t i = 0; i < track_len; ++i) {
    const std::size_t raw = start + offset + i * stride;
    idx[i] = looped ? raw % seq_len : raw;
  }
  return idx;
}

}  // namespace detail

/// Draws exactly P identities (without replacement) with K tracks each.
template <typename T>
TrackBatch<T> sample_batch(const TrackDataset<T>& ds, const SamplerConfig& cfg, Rng& rng) {
  validate_sampler_config(cfg);
  if (ds.n_identities() < cfg.p) {
    throw std::invalid_argument("sampler: need at least " + std::to_string(cfg.p) +
                                " identities, dataset has " + std::to_string(ds.n_identities()));
  }
  for (std::size_t id = 0; id < ds.n_identities(); ++id) {
    if (ds.identities[id].empty()) {
      throw std::invalid_argument("sampler: identity " + std::to_string(id) + " has no sequences");
    }
  }

  // Partial Fisher-Yates for the identity draw.
  std::vector<std::size_t> ids(ds.n_identities());
  std::iota(ids.begin(), ids.end(), 0);
  for (std::size_t i = 0; i < cfg.p; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(ids.size() - i));
    std::swap(ids[i], ids[j]);
  }

  const auto& first_seq = ds.identities[ids[0]][0].frames;
  const std::size_t c = first_seq.dim(0), h = first_seq.dim(2), w = first_seq.dim(3);

  TrackBatch<T> batch;
  batch.tracks = Tensor<T>({cfg.p * cfg.k, c, cfg.track_len, h, w});
  batch.labels.reserve(cfg.p * cfg.k);

  std::size_t row = 0;
  for (std::size_t i = 0; i < cfg.p; ++i) {
    const std::size_t id = ids[i];
    for (std::size_t t = 0; t < cfg.k; ++t, ++row) {
      const auto& seqs = ds.identities[id];
      const auto& seq = seqs[rng.uniform_int(seqs.size())].frames;
      if (seq.dim(0) != c || seq.dim(2) != h || seq.dim(3) != w) {
        throw std::invalid_argument("sampler: sequence shape " + shape_string(seq.shape()) +
                                    " differs from the batch layout");
      }
      const std::size_t seq_len = seq.dim(1);
      const auto idx = detail::sample_track_indices(seq_len, cfg.track_len, cfg.crop_window, rng);
      long dy = 0, dx = 0;
      if (cfg.spatial_jitter > 0) {
        const long j = static_cast<long>(cfg.spatial_jitter);
        dy = static_cast<long>(rng.uniform_int(2 * cfg.spatial_jitter + 1)) - j;
        dx = static_cast<long>(rng.uniform_int(2 * cfg.spatial_jitter + 1)) - j;
      }
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t fr = 0; fr < cfg.track_len; ++fr) {
          const T* src = seq.data() + (ch * seq_len + idx[fr]) * h * w;
          T* dst = batch.tracks.data() + (((row * c + ch) * cfg.track_len + fr) * h) * w;
          if (dy == 0 && dx == 0) {
            std::copy(src, src + h * w, dst);
          } else {
            detail::copy_frame_shifted(src, dst, h, w, dy, dx);
          }
        }
      }
      batch.labels.push_back(static_cast<int>(id));
    }
  }
  return batch;
}

struct SyntheticSpec {
  std::size_t n_ids = 8;
  std::size_t seqs_per_id = 4;
  std::size_t seq_len = 16;
  std::size_t channels = 3;
  std::size_t height = 16;
  std::size_t width = 16;
  double noise_sigma = 0.1;
};

/// One standard-normal prototype frame per identity, stacked [n_ids, C, H, W].
template <typename T>
Tensor<T> synthetic_prototypes(std::size_t n_ids, std::size_t channels, std::size_t height,
                               std::size_t width, Rng& rng) {
  return normal_tensor<T>({n_ids, channels, height, width}, rng);
}

/// Sequences built as prototype + per-frame Gaussian noise. The camera label
/// of sequence s is camera_offset + s.
template <typename T>
TrackDataset<T> synthesize_tracks(const Tensor<T>& prototypes, std::size_t seqs_per_id,
                                  std::size_t seq_len, double noise_sigma, Rng& rng,
                                  int camera_offset = 0) {
  const std::size_t n_ids = prototypes.dim(0);
  const std::size_t c = prototypes.dim(1), h = prototypes.dim(2), w = prototypes.dim(3);
  TrackDataset<T> ds;
  ds.identities.resize(n_ids);
  for (std::size_t id = 0; id < n_ids; ++id) {
    const T* proto = prototypes.data() + id * c * h * w;
    for (std::size_t s = 0; s < seqs_per_id; ++s) {
      typename TrackDataset<T>::Sequence seq;
      seq.camera = camera_offset + static_cast<int>(s);
      seq.frames = Tensor<T>({c, seq_len, h, w});
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t fr = 0; fr < seq_len; ++fr) {
          T* dst = seq.frames.data() + (ch * seq_len + fr) * h * w;
          const T* p = proto + ch * h * w;
          for (std::size_t px = 0; px < h * w; ++px) {
            dst[px] = p[px] + static_cast<T>(rng.gauss(0.0, noise_sigma));
          }
        }
      }
      ds.identities[id].push_back(std::move(seq));
    }
  }
  return ds;
}

/// Prototype-plus-noise dataset: identities are separable at low noise.
template <typename T>
TrackDataset<T> make_synthetic(const SyntheticSpec& spec, Rng& rng) {
  if (spec.n_ids < 2) throw std::invalid_argument("make_synthetic: n_ids must be >= 2");
  const Tensor<T> protos =
      synthetic_prototypes<T>(spec.n_ids, spec.channels, spec.height, spec.width, rng);
  return synthesize_tracks<T>(protos, spec.seqs_per_id, spec.seq_len, spec.noise_sigma, rng);
}

}  // namespace stnl
