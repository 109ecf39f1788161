#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "onp/attack.hpp"
#include "onp/nn/train.hpp"

namespace onp {

// Mean cross-entropy of the masked model over labeled data.
inline double clean_loss(nn::ConvModel& model, const Dataset& data,
                         const nn::PruneMask* mask = nullptr) {
    if (data.size() == 0) throw InputError("clean_loss: empty data");
    Tensor logits = nn::predict_logits(model, data, mask);
    return nn::softmax_cross_entropy(logits, data.labels.data(), data.size());
}

// Mean cross-entropy over triggered inputs scored against the shifted
// (target) labels.
inline double backdoor_loss(nn::ConvModel& model, const Dataset& data, const TriggerSpec& trigger,
                            const nn::PruneMask* mask = nullptr) {
    if (data.size() == 0) throw InputError("backdoor_loss: empty data");
    Dataset triggered = make_backdoor_testset(data, trigger, /*exclude_target=*/false);
    return clean_loss(model, triggered, mask);
}

struct LossChangeRow {
    std::string unit;
    int channel;
    double clc;
    double blc;
};

struct LossChangeTable {
    std::vector<LossChangeRow> rows;
    double base_clean_loss = 0.0;
    double base_backdoor_loss = 0.0;
    std::string data_tag;
};

// Per unit-channel loss changes: clc = L_cl(pruned) - L_cl(base), blc
// likewise, where each probe prunes exactly that one unit channel (group
// channels expand across member layers).
inline LossChangeTable loss_change_table(nn::ConvModel& model, const Dataset& defense_clean_data,
                                         const TriggerSpec& trigger,
                                         const std::vector<std::string>& units,
                                         const std::string& data_tag = "defense") {
    LossChangeTable table;
    table.data_tag = data_tag;
    Dataset triggered = make_backdoor_testset(defense_clean_data, trigger, false);
    table.base_clean_loss = clean_loss(model, defense_clean_data);
    table.base_backdoor_loss = clean_loss(model, triggered);
    for (const auto& unit : units) {
        if (!model.has_unit(unit)) throw IndexError("loss_change_table: unknown unit " + unit);
        const int width = model.unit_width(unit);
        for (int ch = 0; ch < width; ++ch) {
            nn::PruneMask mask = nn::expand_prune_set(model, {{unit, ch}});
            LossChangeRow row;
            row.unit = unit;
            row.channel = ch;
            row.clc = clean_loss(model, defense_clean_data, &mask) - table.base_clean_loss;
            row.blc = clean_loss(model, triggered, &mask) - table.base_backdoor_loss;
            if (!finite(row.clc) || !finite(row.blc))
                throw TrainingError("non-finite loss change at " + unit + ":" +
                                    std::to_string(ch));
            table.rows.push_back(row);
        }
    }
    return table;
}

// Quadrant by sign pair, CLC on x, BLC on y; exact zeros sit on an axis.
inline std::string scatter_quadrant(double clc, double blc) {
    if (clc == 0.0 && blc == 0.0) return "origin";
    if (clc == 0.0 || blc == 0.0) return "axis";
    if (blc > 0.0) return clc > 0.0 ? "1" : "2";
    return clc < 0.0 ? "3" : "4";
}

inline void export_scatter(const LossChangeTable& table, const std::string& path,
                           const std::map<std::pair<std::string, int>, std::string>* pruned_by =
                               nullptr) {
    if (table.rows.empty()) throw InputError("export_scatter: empty table");
    namespace fs = std::filesystem;
    if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write scatter file " + path);
    out << "unit,channel,clc,blc,quadrant,pruned_by\n";
    for (const auto& r : table.rows) {
        std::string tag;
        if (pruned_by) {
            auto it = pruned_by->find({r.unit, r.channel});
            if (it != pruned_by->end()) tag = it->second;
        }
        out << r.unit << "," << r.channel << "," << r.clc << "," << r.blc << ","
            << scatter_quadrant(r.clc, r.blc) << "," << tag << "\n";
    }
    if (!out) throw IoError("short write to " + path);
}

inline void save_loss_table(const LossChangeTable& table, const std::string& path) {
    namespace fs = std::filesystem;
    if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write loss table " + path);
    out << "unit,channel,clc,blc\n";
    for (const auto& r : table.rows)
        out << r.unit << "," << r.channel << "," << r.clc << "," << r.blc << "\n";
}

}  // namespace onp
