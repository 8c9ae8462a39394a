#pragma once

#include <iomanip>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "engageformer/data.hpp"
#include "engageformer/model.hpp"

namespace engageformer {

// Confusion matrix indexed [true][predicted]. Macro precision/recall average
// per-class scores, scoring a class 0 when its denominator is empty.
struct EvalReport {
    std::vector<std::vector<std::size_t>> confusion;
    std::size_t total = 0;
    double accuracy = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
};

inline EvalReport report_from_confusion(std::vector<std::vector<std::size_t>> confusion) {
    EvalReport rep;
    rep.confusion = std::move(confusion);
    const std::size_t c = rep.confusion.size();
    std::size_t diag = 0;
    std::vector<std::size_t> row_sum(c, 0), col_sum(c, 0);
    for (std::size_t i = 0; i < c; ++i) {
        if (rep.confusion[i].size() != c)
            throw ShapeError("confusion matrix is not square");
        for (std::size_t j = 0; j < c; ++j) {
            rep.total += rep.confusion[i][j];
            row_sum[i] += rep.confusion[i][j];
            col_sum[j] += rep.confusion[i][j];
        }
        diag += rep.confusion[i][i];
    }
    if (rep.total == 0) throw DataError("cannot score an empty evaluation set");
    rep.accuracy = static_cast<double>(diag) / static_cast<double>(rep.total);
    for (std::size_t i = 0; i < c; ++i) {
        const double tp = static_cast<double>(rep.confusion[i][i]);
        rep.macro_precision += col_sum[i] ? tp / static_cast<double>(col_sum[i]) : 0.0;
        rep.macro_recall += row_sum[i] ? tp / static_cast<double>(row_sum[i]) : 0.0;
    }
    rep.macro_precision /= static_cast<double>(c);
    rep.macro_recall /= static_cast<double>(c);
    return rep;
}

// Scores every manifest entry with the deterministic inference path. Worker
// threads fill private confusion matrices over strided slices of the manifest;
// integer merges commute, so the result is independent of thread count.
template <typename S>
EvalReport evaluate(const ModelLayout& layout, const ParamSet<S>& params,
                    const Manifest& manifest, std::size_t threads = 1) {
    if (manifest.entries.empty()) throw DataError("evaluation manifest is empty");
    if (manifest.classes() != layout.cfg.classes)
        throw ConfigError("manifest has " + std::to_string(manifest.classes()) +
                          " classes, model expects " + std::to_string(layout.cfg.classes));
    if (threads == 0) threads = 1;
    threads = std::min(threads, manifest.entries.size());

    const std::size_t c = layout.cfg.classes;
    std::vector<std::vector<std::vector<std::size_t>>> partial(
        threads, std::vector<std::vector<std::size_t>>(c, std::vector<std::size_t>(c, 0)));
    std::vector<std::exception_ptr> errors(threads);

    auto work = [&](std::size_t w) {
        try {
            for (std::size_t i = w; i < manifest.entries.size(); i += threads) {
                const ManifestEntry& e = manifest.entries[i];
                Tensor<S> clip = normalize_clip(read_clip<S>(manifest.resolve(e)));
                const Prediction pred = predict(layout, params, clip);
                partial[w][e.label][pred.cls] += 1;
            }
        } catch (...) {
            errors[w] = std::current_exception();
        }
    };
    if (threads == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(work, w);
        for (std::thread& t : pool) t.join();
    }
    for (const std::exception_ptr& e : errors)
        if (e) std::rethrow_exception(e);

    std::vector<std::vector<std::size_t>> confusion(c, std::vector<std::size_t>(c, 0));
    for (std::size_t w = 0; w < threads; ++w)
        for (std::size_t i = 0; i < c; ++i)
            for (std::size_t j = 0; j < c; ++j) confusion[i][j] += partial[w][i][j];
    return report_from_confusion(std::move(confusion));
}

inline std::string format_report(const EvalReport& rep, const std::vector<std::string>& labels) {
    std::ostringstream os;
    os << "samples = " << rep.total << "\n";
    os << std::fixed << std::setprecision(4);
    os << "accuracy = " << rep.accuracy << "\n";
    os << "macro_precision = " << rep.macro_precision << "\n";
    os << "macro_recall = " << rep.macro_recall << "\n";
    os << "confusion (rows = true, cols = predicted):\n";
    std::size_t name_w = 4;
    for (const std::string& l : labels) name_w = std::max(name_w, l.size());
    std::size_t cell_w = 5;
    for (const auto& row : rep.confusion)
        for (std::size_t v : row) cell_w = std::max(cell_w, std::to_string(v).size() + 1);
    os << std::string(name_w, ' ');
    for (const std::string& l : labels)
        os << std::setw(static_cast<int>(std::max(cell_w, l.size() + 1))) << l;
    os << "\n";
    for (std::size_t i = 0; i < rep.confusion.size(); ++i) {
        os << std::setw(static_cast<int>(name_w)) << labels[i];
        for (std::size_t j = 0; j < rep.confusion.size(); ++j)
            os << std::setw(static_cast<int>(std::max(cell_w, labels[j].size() + 1)))
               << rep.confusion[i][j];
        os << "\n";
    }
    return os.str();
}

}  // namespace engageformer
