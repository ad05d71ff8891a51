// Python bindings for the modeling core: the ANN index, the key-value
// memory, the session encoder/decoder, the gate, and the ranking helpers.
// Corpus preprocessing and artifact management stay with the CLI.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "manrec/eval.hpp"
#include "manrec/gating.hpp"

namespace py = pybind11;
using namespace manrec;

namespace {

using Vec = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<real> as_vector(const Vec& a) {
    if (a.ndim() != 1) throw Error("expected a 1-d array");
    return std::vector<real>(a.data(), a.data() + a.shape(0));
}

py::array_t<double> to_array(const std::vector<real>& v) {
    py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

std::pair<py::array_t<std::int64_t>, py::array_t<double>> neighbors_out(
    const NeighborSet& nbrs) {
    py::array_t<std::int64_t> ids(static_cast<py::ssize_t>(nbrs.size()));
    py::array_t<double> dists(static_cast<py::ssize_t>(nbrs.size()));
    for (std::size_t i = 0; i < nbrs.size(); ++i) {
        ids.mutable_data()[i] = nbrs[i].id;
        dists.mutable_data()[i] = static_cast<double>(nbrs[i].dist);
    }
    return {std::move(ids), std::move(dists)};
}

std::pair<py::array_t<std::int32_t>, py::array_t<double>> prediction_out(
    const MemoryPrediction& pm) {
    py::array_t<std::int32_t> items(static_cast<py::ssize_t>(pm.probs.size()));
    py::array_t<double> probs(static_cast<py::ssize_t>(pm.probs.size()));
    for (std::size_t i = 0; i < pm.probs.size(); ++i) {
        items.mutable_data()[i] = pm.probs[i].item;
        probs.mutable_data()[i] = static_cast<double>(pm.probs[i].p);
    }
    return {std::move(items), std::move(probs)};
}

MemoryPrediction prediction_in(const py::array_t<std::int32_t>& items, const Vec& probs) {
    if (items.ndim() != 1 || probs.ndim() != 1 || items.shape(0) != probs.shape(0))
        throw Error("items and probs must be 1-d arrays of equal length");
    MemoryPrediction pm;
    pm.probs.resize(static_cast<std::size_t>(items.shape(0)));
    for (std::size_t i = 0; i < pm.probs.size(); ++i)
        pm.probs[i] = {items.data()[i], static_cast<real>(probs.data()[i])};
    std::sort(pm.probs.begin(), pm.probs.end(),
              [](const ScoredItem& a, const ScoredItem& b) { return a.item < b.item; });
    return pm;
}

}  // namespace

PYBIND11_MODULE(_manrec, m) {
    m.doc() = "incremental session recommender core";

    py::class_<IndexConfig>(m, "IndexConfig")
        .def(py::init<>())
        .def_readwrite("nlist", &IndexConfig::nlist)
        .def_readwrite("m", &IndexConfig::m)
        .def_readwrite("bits", &IndexConfig::bits)
        .def_readwrite("kmeans_iters", &IndexConfig::kmeans_iters)
        .def_readwrite("default_nprobe", &IndexConfig::default_nprobe)
        .def_readwrite("rerank", &IndexConfig::rerank)
        .def_readwrite("seed", &IndexConfig::seed)
        .def_readwrite("use_pq", &IndexConfig::use_pq)
        .def_readwrite("keep_raw_keys", &IndexConfig::keep_raw_keys);

    py::class_<IvfPqIndex>(m, "Index")
        .def(py::init<>())
        .def(
            "fit",
            [](IvfPqIndex& self, const Vec& data, const IndexConfig& cfg) {
                if (data.ndim() != 2) throw Error("expected an (n, dim) array");
                std::vector<real> flat(data.data(), data.data() + data.size());
                self.fit(flat.data(), static_cast<std::size_t>(data.shape(0)),
                         static_cast<std::size_t>(data.shape(1)), cfg);
            },
            py::arg("data"), py::arg("config") = IndexConfig{})
        .def("add",
             [](IvfPqIndex& self, const Vec& key, SlotId payload) {
                 self.add(as_vector(key).data(), payload);
             })
        .def(
            "query",
            [](const IvfPqIndex& self, const Vec& q, std::size_t k, std::size_t nprobe,
               SlotId min_payload) {
                return neighbors_out(self.query(as_vector(q).data(), k, nprobe, min_payload));
            },
            py::arg("q"), py::arg("k"), py::arg("nprobe") = 0, py::arg("min_payload") = 0)
        .def("exact_query",
             [](const IvfPqIndex& self, const Vec& q, std::size_t k, SlotId min_payload) {
                 return neighbors_out(self.exact_query(as_vector(q).data(), k, min_payload));
             },
             py::arg("q"), py::arg("k"), py::arg("min_payload") = 0)
        .def_property_readonly("fitted", &IvfPqIndex::fitted)
        .def_property_readonly("size", &IvfPqIndex::size)
        .def_property_readonly("dim", &IvfPqIndex::dim)
        .def_property_readonly("nlist", &IvfPqIndex::nlist)
        .def("list_bytes", &IvfPqIndex::list_bytes);

    py::class_<MemoryConfig>(m, "MemoryConfig")
        .def(py::init<>())
        .def_readwrite("dim", &MemoryConfig::dim)
        .def_readwrite("capacity", &MemoryConfig::capacity)
        .def_readwrite("store_raw_keys", &MemoryConfig::store_raw_keys)
        .def_readwrite("dstar_floor", &MemoryConfig::dstar_floor);

    py::class_<MemoryStore>(m, "MemoryStore")
        .def(py::init([](const MemoryConfig& cfg) { return MemoryStore(cfg); }),
             py::arg("config"))
        .def("insert",
             [](MemoryStore& self, const Vec& key, ItemId value) {
                 self.insert(as_vector(key).data(), value);
             })
        .def(
            "neighbors",
            [](const MemoryStore& self, const Vec& q, std::size_t k, std::size_t nprobe) {
                return neighbors_out(self.neighbors(as_vector(q).data(), k, nprobe));
            },
            py::arg("q"), py::arg("k"), py::arg("nprobe") = 0)
        .def(
            "predict",
            [](const MemoryStore& self, const Vec& q, std::size_t k, std::size_t nprobe) {
                return prediction_out(self.predict(as_vector(q).data(), k, nprobe));
            },
            py::arg("q"), py::arg("k"), py::arg("nprobe") = 0)
        .def("rebuild_index", &MemoryStore::rebuild_index, py::arg("config") = IndexConfig{})
        .def_property_readonly("has_index", &MemoryStore::has_index)
        .def_property_readonly("live_count", &MemoryStore::live_count)
        .def_property_readonly("total_inserted", &MemoryStore::total_inserted)
        .def("value_of", &MemoryStore::value_of);

    py::class_<RecommenderConfig>(m, "RecommenderConfig")
        .def(py::init<>())
        .def_readwrite("embed_dim", &RecommenderConfig::embed_dim)
        .def_readwrite("hidden_dim", &RecommenderConfig::hidden_dim)
        .def_readwrite("epochs", &RecommenderConfig::epochs)
        .def_readwrite("batch_size", &RecommenderConfig::batch_size)
        .def_readwrite("lr", &RecommenderConfig::lr)
        .def_readwrite("init_scale", &RecommenderConfig::init_scale)
        .def_readwrite("seed", &RecommenderConfig::seed);

    py::class_<RecommenderModel>(m, "Recommender")
        .def(py::init([](const std::vector<std::string>& items,
                         const RecommenderConfig& cfg) {
                 ItemVocabulary vocab;
                 for (const auto& id : items) vocab.ensure(id);
                 return RecommenderModel(std::move(vocab), cfg);
             }),
             py::arg("items"), py::arg("config"))
        .def_property_readonly("n_items", &RecommenderModel::n_items)
        .def_property_readonly("hidden_dim", &RecommenderModel::hidden_dim)
        .def("encode",
             [](const RecommenderModel& self, const std::vector<ItemId>& prefix) {
                 return to_array(self.encode(prefix));
             })
        .def("predict",
             [](const RecommenderModel& self, const std::vector<ItemId>& prefix) {
                 return to_array(self.predict(prefix));
             })
        .def("predict_from_context",
             [](const RecommenderModel& self, const Vec& c) {
                 const auto v = as_vector(c);
                 if (v.size() != self.hidden_dim()) throw Error("context dimension mismatch");
                 return to_array(self.predict_from_context(v.data()));
             })
        .def("ensure_item", &RecommenderModel::ensure_item)
        .def("item_of",
             [](const RecommenderModel& self, ItemId i) { return self.vocab().id_of(i); })
        .def("item_id",
             [](const RecommenderModel& self, const std::string& id)
                 -> std::optional<ItemId> { return self.vocab().find(id); })
        .def(
            "pretrain",
            [](RecommenderModel& self, const std::vector<std::vector<ItemId>>& train,
               const std::vector<std::vector<ItemId>>& valid) {
                std::vector<std::tuple<std::size_t, double, double>> out;
                for (const auto& e : self.pretrain(train, valid))
                    out.emplace_back(e.epoch, e.train_loss, e.valid_loss);
                return out;
            },
            py::arg("train"), py::arg("valid") = std::vector<std::vector<ItemId>>{})
        .def("incremental_update", &RecommenderModel::incremental_update, py::arg("pairs"),
             py::arg("lr"))
        .def("mean_loss", &RecommenderModel::mean_loss);

    py::class_<GateNetwork>(m, "Gate")
        .def(py::init<std::size_t, std::size_t, std::uint64_t, double>(),
             py::arg("input_dim"), py::arg("hidden_dim"), py::arg("seed"),
             py::arg("init_scale") = 0.1)
        .def("weight", [](const GateNetwork& self, const Vec& c) {
            const auto v = as_vector(c);
            if (v.size() != self.input_dim()) throw Error("context dimension mismatch");
            return static_cast<double>(self.weight(v.data()));
        });

    m.def("kde_kernel", [](double u) { return static_cast<double>(kde_kernel(u)); });
    m.def(
        "combine",
        [](const Vec& pn, const py::array_t<std::int32_t>& items, const Vec& probs,
           double w) {
            return to_array(combine(as_vector(pn), prediction_in(items, probs),
                                    static_cast<real>(w)));
        },
        py::arg("pn"), py::arg("items"), py::arg("probs"), py::arg("w"));
    m.def(
        "rank_of",
        [](const Vec& p, ItemId target) { return rank_dense(as_vector(p), target); },
        py::arg("p"), py::arg("target"));
    m.def("rank_metrics", &rank_metrics, py::arg("rank"), py::arg("k"));
}
