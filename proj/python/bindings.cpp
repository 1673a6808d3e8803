#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "geomeld/caption.hpp"
#include "geomeld/eval.hpp"
#include "geomeld/selfcheck.hpp"
#include "geomeld/tile_io.hpp"
#include "geomeld/trainer.hpp"

namespace py = pybind11;
using namespace geomeld;

namespace {

py::array_t<double> raster_to_numpy(const Raster& r) {
    py::array_t<double> out({r.channels, r.height, r.width});
    std::copy(r.values.begin(), r.values.end(), out.mutable_data());
    return out;
}

py::array_t<uint8_t> classmap_to_numpy(const ClassMap& m) {
    py::array_t<uint8_t> out({m.height, m.width});
    std::copy(m.labels.begin(), m.labels.end(), out.mutable_data());
    return out;
}

Raster numpy_to_raster(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() == 2) {
        Raster r = Raster::zeros(1, a.shape(0), a.shape(1));
        std::copy(a.data(), a.data() + a.size(), r.values.begin());
        return r;
    }
    if (a.ndim() == 3) {
        Raster r = Raster::zeros(a.shape(0), a.shape(1), a.shape(2));
        std::copy(a.data(), a.data() + a.size(), r.values.begin());
        return r;
    }
    throw ShapeError("expected a 2-d or 3-d array");
}

ClassMap numpy_to_classmap(const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw ShapeError("expected a 2-d class map");
    ClassMap m = ClassMap::zeros(a.shape(0), a.shape(1));
    std::copy(a.data(), a.data() + a.size(), m.labels.begin());
    return m;
}

py::dict attributes_to_dict(const StructuredAttributes& a) {
    py::dict d;
    d["dominant_class"] = a.dominant_class;
    d["dominant_class_name"] = dw_class_names()[static_cast<size_t>(a.dominant_class)];
    d["dominant_fraction"] = a.dominant_fraction;
    d["class_fractions"] = a.class_fractions;
    d["water_fraction"] = a.water_fraction;
    d["terrain_class"] = a.terrain_class;
    d["elevation"] = py::dict(py::arg("min_m") = a.elevation.min_m,
                              py::arg("max_m") = a.elevation.max_m,
                              py::arg("mean_m") = a.elevation.mean_m);
    d["tags"] = py::dict(py::arg("center") = a.tags.center,
                         py::arg("surrounding") = a.tags.surrounding,
                         py::arg("area") = a.tags.area);
    return d;
}

py::dict audit_to_dict(const CaptionAudit& audit) {
    py::dict d;
    py::list candidates;
    for (size_t i = 0; i < audit.candidates.size(); ++i) {
        candidates.append(py::dict(py::arg("text") = audit.candidates[i].first,
                                   py::arg("recipe") = audit.candidates[i].second,
                                   py::arg("score") = audit.scores[i]));
    }
    d["candidates"] = candidates;
    d["best_index"] = audit.best_index;
    py::list conflicts;
    for (const auto& c : audit.conflicts) {
        conflicts.append(py::dict(py::arg("rule") = c.rule_id, py::arg("claim") = c.claim,
                                  py::arg("evidence") = c.evidence));
    }
    d["conflicts"] = conflicts;
    d["final_caption"] = audit.final_caption;
    d["revised"] = audit.revised;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "GeoMeld synthetic multimodal pretraining core";

    py::class_<TileSample>(m, "TileSample")
        .def_property_readonly("tile_id", [](const TileSample& t) { return t.tile_id; })
        .def_property_readonly("caption", [](const TileSample& t) { return t.caption; })
        .def_property_readonly("anchor_date", [](const TileSample& t) { return t.anchor_date.iso(); })
        .def_property_readonly("lat", [](const TileSample& t) { return t.lat; })
        .def_property_readonly("lon", [](const TileSample& t) { return t.lon; })
        .def_property_readonly("s2", [](const TileSample& t) { return raster_to_numpy(t.s2); })
        .def_property_readonly("s1", [](const TileSample& t) { return raster_to_numpy(t.s1); })
        .def_property_readonly("dem", [](const TileSample& t) { return raster_to_numpy(t.dem); })
        .def_property_readonly("canopy",
                               [](const TileSample& t) { return raster_to_numpy(t.canopy); })
        .def_property_readonly("dw", [](const TileSample& t) { return classmap_to_numpy(t.dw); })
        .def_property_readonly("esa", [](const TileSample& t) { return classmap_to_numpy(t.esa); })
        .def_property_readonly("attributes",
                               [](const TileSample& t) { return attributes_to_dict(t.attributes); })
        .def("save", [](const TileSample& t, const std::string& path) { write_tile(path, t); },
             py::arg("path"))
        .def_static("load", [](const std::string& path) { return read_tile(path); },
                    py::arg("path"))
        .def("__repr__", [](const TileSample& t) {
            return "<TileSample " + t.tile_id + " " + std::to_string(t.s2.height) + "x" +
                   std::to_string(t.s2.width) + ">";
        });

    m.def(
        "generate_tile",
        [](const std::string& tile_id, int64_t height, int64_t width, int64_t patch,
           uint64_t seed) { return generate_tile(tile_id, {height, width, patch}, seed); },
        py::arg("tile_id"), py::arg("height") = 128, py::arg("width") = 128, py::arg("patch") = 4,
        py::arg("seed") = 0);

    m.def("temporal_anchor", [](const std::string& tile_id) {
        CalendarDate d = temporal_anchor(tile_id);
        return py::make_tuple(d.year, d.month, d.day);
    });

    m.def(
        "geomorphon_classify",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& dem, int radius,
           double flat_deg) {
            return classmap_to_numpy(geomorphon_classify(numpy_to_raster(dem), radius, flat_deg));
        },
        py::arg("dem"), py::arg("lookup_radius"), py::arg("flat_deg") = 1.0);
    m.attr("geomorphon_forms") = geomorphon_form_names();

    m.def(
        "water_consensus",
        [](const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& dw,
           const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& esa) {
            ClassMap d = numpy_to_classmap(dw);
            WaterConsensus wc = water_consensus(d, numpy_to_classmap(esa));
            py::array_t<uint8_t> mask({d.height, d.width});
            std::copy(wc.mask.begin(), wc.mask.end(), mask.mutable_data());
            return py::make_tuple(mask, wc.fraction);
        },
        py::arg("dw"), py::arg("esa"));

    m.def(
        "make_masks",
        [](int64_t patches_h, int64_t patches_w, double ratio, double target_fraction,
           uint64_t seed) {
            MaskPair mp = make_masks(patches_h, patches_w, ratio, target_fraction, seed);
            return py::make_tuple(mp.ctx_visible, mp.tgt_visible);
        },
        py::arg("patches_h"), py::arg("patches_w"), py::arg("ratio") = 0.70,
        py::arg("target_fraction") = 0.25, py::arg("seed") = 0);

    m.def("caption_pipeline",
          [](const TileSample& tile) { return audit_to_dict(run_caption_pipeline(tile)); },
          py::arg("tile"));
    m.def("verify_caption", [](const TileSample& tile, const std::string& caption) {
        VerifyResult v = verify_and_revise(tile, caption);
        py::list conflicts;
        for (const auto& c : v.conflicts) {
            conflicts.append(py::dict(py::arg("rule") = c.rule_id, py::arg("claim") = c.claim,
                                      py::arg("evidence") = c.evidence));
        }
        return py::dict(py::arg("caption") = v.caption, py::arg("conflicts") = conflicts,
                        py::arg("revised") = v.revised);
    });

    m.def(
        "train",
        [](const std::string& config_path, const std::string& out_dir, int64_t seed,
           int64_t max_steps) {
            TrainConfig c = load_train_config(config_path);
            if (!out_dir.empty()) c.out_dir = out_dir;
            if (seed >= 0) c.seed = static_cast<uint64_t>(seed);
            if (max_steps > 0) c.max_steps = max_steps;
            TrainResult r = train(c);
            py::dict d;
            d["checkpoint"] = r.checkpoint_path;
            d["metrics"] = r.metrics_path;
            d["steps"] = r.steps;
            d["tiles"] = r.tiles;
            d["first_total"] = r.reports.front().total;
            d["last_total"] = r.reports.back().total;
            return d;
        },
        py::arg("config_path"), py::arg("out_dir") = "", py::arg("seed") = -1,
        py::arg("max_steps") = 0);

    m.def(
        "evaluate",
        [](const std::string& checkpoint, const std::string& data_manifest, int64_t k,
           uint64_t seed) {
            LoadedCheckpoint ck = load_checkpoint(checkpoint);
            PreparedDataset gallery =
                prepare_dataset(data_manifest, ck.model.config, ck.model.config.text_len, 8);
            PreparedDataset tr, te;
            tr.grid_h = te.grid_h = gallery.grid_h;
            tr.grid_w = te.grid_w = gallery.grid_w;
            for (size_t i = 0; i < gallery.tiles.size(); ++i) {
                (i % 2 == 0 ? tr : te).tiles.push_back(gallery.tiles[i]);
            }
            ProbeResult probe = linear_probe(ck.model, tr, te, 60, 0.5, seed);
            RetrievalPair rp = retrieval_recall(ck.model, gallery, k);
            py::dict d;
            d["probe_accuracy"] = probe.accuracy;
            d["probe_chance"] = probe.chance;
            d["probe_baseline"] = probe.baseline_accuracy;
            d["recall_image_to_text"] = rp.image_to_text.recall;
            d["recall_text_to_image"] = rp.text_to_image.recall;
            d["k"] = k;
            d["gallery"] = gallery.tiles.size();
            return d;
        },
        py::arg("checkpoint"), py::arg("data_manifest"), py::arg("k") = 5, py::arg("seed") = 0);

    m.def("selfcheck", [](bool inject_fault) {
        SelfCheckResult r = run_selfcheck(inject_fault);
        py::dict d;
        py::list suites;
        for (const auto& s : r.suites) {
            suites.append(py::dict(py::arg("name") = s.name, py::arg("passed") = s.passed,
                                   py::arg("failed") = s.failed));
        }
        d["suites"] = suites;
        d["ok"] = r.ok();
        return d;
    }, py::arg("inject_fault") = false);

    m.def("gradient_oracles", [](uint64_t seed) {
        GradientOracleReport r = run_gradient_oracles(seed);
        return py::dict(py::arg("mpmae") = r.max_err_mpmae, py::arg("jepa") = r.max_err_jepa,
                        py::arg("itc") = r.max_err_itc, py::arg("total") = r.max_err_total);
    }, py::arg("seed") = 11);

    m.attr("dw_class_names") = dw_class_names();
    m.attr("esa_class_names") = esa_class_names();
    m.attr("__version__") = "0.1.0";
}
