#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "onp/dataset.hpp"

using namespace onp;

TEST_CASE("synthetic dataset is deterministic and label-cycled") {
    Dataset a = make_synthetic_dataset(50, 7);
    Dataset b = make_synthetic_dataset(50, 7);
    CHECK(a.images == b.images);
    CHECK(a.labels == b.labels);
    for (int i = 0; i < a.size(); ++i) CHECK(a.labels[static_cast<size_t>(i)] == i % 10);
    for (float v : a.images) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    Dataset c = make_synthetic_dataset(50, 8);
    CHECK(a.images != c.images);
}

TEST_CASE("stratified indices: exact count, balanced classes, deterministic") {
    Dataset ds = make_synthetic_dataset(1000, 3);
    auto idx = stratified_indices(ds, 0.01, 5);
    CHECK(idx.size() == 10);
    std::vector<int> per_class(10, 0);
    for (int i : idx) ++per_class[static_cast<size_t>(ds.labels[static_cast<size_t>(i)])];
    for (int c : per_class) CHECK(c == 1);
    CHECK(stratified_indices(ds, 0.01, 5) == idx);
    CHECK_THROWS_AS(stratified_indices(ds, 0.0, 5), ConfigError);
    CHECK_THROWS_AS(stratified_indices(ds, 1.5, 5), ConfigError);
}

TEST_CASE("tensor-dir round trip") {
    Dataset ds = make_synthetic_dataset(12, 9);
    const std::string dir = std::filesystem::temp_directory_path() / "onp_ds_rt";
    save_tensor_dir(ds, dir);
    Dataset back = load_tensor_dir(dir);
    CHECK(back.images == ds.images);
    CHECK(back.labels == ds.labels);
}

TEST_CASE("missing dataset files raise i/o errors") {
    CHECK_THROWS_AS(load_cifar10_bin({"/nonexistent/path.bin"}), IoError);
    CHECK_THROWS_AS(load_tensor_dir("/nonexistent"), IoError);
}
