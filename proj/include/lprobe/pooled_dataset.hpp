#pragma once

#include <cstdint>
#include <vector>

#include "lprobe/embedding_store.hpp"
#include "lprobe/probe_model.hpp"

namespace lprobe {

/// Every split of a manifest, time-pooled once and shared read-only by all runs.
struct PooledDataset {
    std::size_t n_layers = 0;
    std::size_t dim = 0;
    std::vector<PooledExample> train, val, test, ood_test;
    /// Hash over the manifest and the raw bytes of every embedding file.
    std::uint64_t fingerprint = 0;

    const std::vector<PooledExample>& split(Split s) const noexcept;
};

/// Reads and pools every record (in parallel across records). Throws on the
/// first unreadable record; the manifest is expected to validate.
PooledDataset load_pooled(const DatasetManifest& manifest);

std::vector<const PooledExample*> pointers(const std::vector<PooledExample>& examples);

} // namespace lprobe
