#include "lprobe/pooled_dataset.hpp"

#include <exception>
#include <optional>

#include "lprobe/hash.hpp"

namespace lprobe {

const std::vector<PooledExample>& PooledDataset::split(Split s) const noexcept {
    switch (s) {
    case Split::train: return train;
    case Split::val: return val;
    case Split::test: return test;
    case Split::ood_test: return ood_test;
    }
    return train;
}

PooledDataset load_pooled(const DatasetManifest& manifest) {
    const std::size_t n = manifest.records.size();
    std::vector<std::optional<PooledExample>> pooled(n);
    std::vector<std::uint64_t> hashes(n, 0);
    std::vector<std::exception_ptr> errors(n);

    const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic, 4)
    for (std::int64_t ii = 0; ii < count; ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        const auto& e = manifest.records[i];
        try {
            const auto bytes = read_file_bytes(manifest.resolve(e));
            Fnv1a64 h;
            h.update(bytes);
            hashes[i] = h.digest();
            LayerStackRecord rec = decode_record(bytes);
            rec.record_id = e.record_id;
            rec.speaker_id = e.speaker_id;
            rec.task = e.task;
            pooled[i] = pool_record(rec, e.labels);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    }
    for (const auto& err : errors)
        if (err) std::rethrow_exception(err);

    PooledDataset ds;
    Fnv1a64 fp;
    fp.update(manifest_to_json(manifest, -1));
    for (std::size_t i = 0; i < n; ++i) {
        fp.update_u64(hashes[i]);
        auto& ex = *pooled[i];
        if (i == 0) {
            ds.n_layers = ex.layers.rows();
            ds.dim = ex.layers.cols();
        } else if (ex.layers.rows() != ds.n_layers || ex.layers.cols() != ds.dim) {
            throw ShapeError("record '" + ex.record_id + "' has inconsistent n_layers/dim");
        }
        switch (manifest.records[i].split) {
        case Split::train: ds.train.push_back(std::move(ex)); break;
        case Split::val: ds.val.push_back(std::move(ex)); break;
        case Split::test: ds.test.push_back(std::move(ex)); break;
        case Split::ood_test: ds.ood_test.push_back(std::move(ex)); break;
        }
    }
    ds.fingerprint = fp.digest();
    return ds;
}

std::vector<const PooledExample*> pointers(const std::vector<PooledExample>& examples) {
    std::vector<const PooledExample*> out;
    out.reserve(examples.size());
    for (const auto& e : examples) out.push_back(&e);
    return out;
}

} // namespace lprobe
