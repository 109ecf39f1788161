#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "onp/loss_probe.hpp"

using namespace onp;
using namespace onp::nn;

namespace {

// zeroed final layer -> all-zero logits -> uniform predictive distribution
ConvModel uniform_logit_model() {
    ConvModel m = build_model(ArchPreset::mini_resnet, 10, 3);
    m.param("fc.weight").zero();
    m.param("fc.bias").zero();
    return m;
}

}  // namespace

TEST_CASE("clean_loss: uniform logits give ln C") {
    ConvModel m = uniform_logit_model();
    Dataset ds = make_synthetic_dataset(20, 5);
    CHECK(clean_loss(m, ds) == Catch::Approx(std::log(10.0)).epsilon(1e-6));
}

TEST_CASE("clean_loss: duplicated dataset leaves the mean unchanged") {
    ConvModel m = build_model(ArchPreset::mini_resnet, 10, 7);
    Dataset ds = make_synthetic_dataset(10, 9);
    Dataset doubled = ds;
    for (int i = 0; i < ds.size(); ++i) doubled.append(ds.image(i), ds.labels[static_cast<size_t>(i)]);
    // gemm blocking differs across batch sizes, so per-image logits agree only
    // to fp32 precision
    CHECK(clean_loss(m, ds) == Catch::Approx(clean_loss(m, doubled)).epsilon(1e-6));
}

TEST_CASE("clean_loss: mask matches zeroed-weight model within 1e-5") {
    ConvModel m = build_model(ArchPreset::mini_resnet, 10, 11);
    Dataset ds = make_synthetic_dataset(12, 13);
    PruneMask mask = expand_prune_set(m, {{"g2", 7}});
    const double via_mask = clean_loss(m, ds, &mask);

    ConvModel zeroed = m;
    for (const auto& lname : m.groups[1].member_layers) zero_channel_weights(zeroed, lname, 7);
    const double via_zero = clean_loss(zeroed, ds);
    CHECK(std::fabs(via_mask - via_zero) <= 1e-5 * std::max(1.0, std::fabs(via_zero)));
}

TEST_CASE("backdoor_loss: alpha=0 trigger equals clean loss against target labels") {
    ConvModel m = build_model(ArchPreset::mini_resnet, 10, 17);
    Dataset ds = make_synthetic_dataset(15, 19);
    TriggerSpec t = make_badnets_trigger(3, 29, 29, 4);
    t.blend_alpha = 0.0f;
    Dataset retarget = ds;
    std::fill(retarget.labels.begin(), retarget.labels.end(), 4);
    CHECK(backdoor_loss(m, ds, t) == Catch::Approx(clean_loss(m, retarget)).epsilon(1e-9));
}

TEST_CASE("backdoor_loss: uniform logits give ln C") {
    ConvModel m = uniform_logit_model();
    Dataset ds = make_synthetic_dataset(8, 23);
    TriggerSpec t = make_badnets_trigger(3, 29, 29, 0);
    CHECK(backdoor_loss(m, ds, t) == Catch::Approx(std::log(10.0)).epsilon(1e-6));
}

TEST_CASE("loss_change_table: dead channel has exactly zero clc and blc") {
    ConvModel m = build_model(ArchPreset::mini_resnet, 10, 29);
    // deaden group channel 5 across all members, then probing it changes nothing
    for (const auto& lname : m.groups[1].member_layers) zero_channel_weights(m, lname, 5);
    Dataset ds = make_synthetic_dataset(10, 31);
    TriggerSpec t = make_badnets_trigger(3, 29, 29, 0);
    LossChangeTable table = loss_change_table(m, ds, t, {"g2"});
    REQUIRE(table.rows.size() == 32);
    const auto& dead = table.rows[5];
    CHECK(dead.unit == "g2");
    CHECK(dead.clc == 0.0);
    CHECK(dead.blc == 0.0);
}

TEST_CASE("loss_change_table: matches zero-weight oracle within 1e-5") {
    ConvModel m = build_model(ArchPreset::mini_resnet, 10, 37);
    Dataset ds = make_synthetic_dataset(8, 41);
    TriggerSpec t = make_badnets_trigger(3, 29, 29, 0);
    LossChangeTable table = loss_change_table(m, ds, t, {"g1", "g2"});
    REQUIRE(table.rows.size() == 48);

    Dataset triggered = make_backdoor_testset(ds, t, false);
    for (const auto& row : table.rows) {
        ConvModel zeroed = m;
        for (const auto& lname : m.find_group(row.unit)->member_layers)
            zero_channel_weights(zeroed, lname, row.channel);
        const double clc = clean_loss(zeroed, ds) - table.base_clean_loss;
        const double blc = clean_loss(zeroed, triggered) - table.base_backdoor_loss;
        CHECK(std::fabs(row.clc - clc) <= 1e-5 * std::max(1.0, std::fabs(clc)));
        CHECK(std::fabs(row.blc - blc) <= 1e-5 * std::max(1.0, std::fabs(blc)));
    }
}

TEST_CASE("loss_change_table: unknown unit raises an index error") {
    ConvModel m = build_model(ArchPreset::mini_resnet, 10, 43);
    Dataset ds = make_synthetic_dataset(5, 47);
    TriggerSpec t = make_badnets_trigger(3, 29, 29, 0);
    CHECK_THROWS_AS(loss_change_table(m, ds, t, {"g9"}), IndexError);
}

TEST_CASE("scatter quadrants follow the sign convention") {
    CHECK(scatter_quadrant(0.1, 2.0) == "1");
    CHECK(scatter_quadrant(-0.1, 2.0) == "2");
    CHECK(scatter_quadrant(-0.1, -2.0) == "3");
    CHECK(scatter_quadrant(0.1, -2.0) == "4");
    CHECK(scatter_quadrant(0.0, 0.0) == "origin");
    CHECK(scatter_quadrant(0.0, 1.0) == "axis");
}

TEST_CASE("export_scatter writes one row per unit-channel") {
    ConvModel m = build_model(ArchPreset::mini_resnet, 10, 53);
    Dataset ds = make_synthetic_dataset(6, 59);
    TriggerSpec t = make_badnets_trigger(3, 29, 29, 0);
    LossChangeTable table = loss_change_table(m, ds, t, {"g2"});
    const std::string path =
        (std::filesystem::temp_directory_path() / "onp_scatter.csv").string();
    export_scatter(table, path);
    std::ifstream in(path);
    std::string line;
    int lines = 0;
    std::getline(in, line);
    CHECK(line == "unit,channel,clc,blc,quadrant,pruned_by");
    while (std::getline(in, line))
        if (!line.empty()) ++lines;
    CHECK(lines == 32);

    LossChangeTable empty;
    CHECK_THROWS_AS(export_scatter(empty, path), InputError);
}
