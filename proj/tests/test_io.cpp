#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fedegg/io.hpp"

using namespace fedegg;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "fedegg_io_test";
    fs::create_directories(dir);
    return dir / name;
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> cifar_record(unsigned char label, unsigned char fill) {
    std::vector<unsigned char> r(kCifarRecordBytes, fill);
    r[0] = label;
    return r;
}

}  // namespace

TEST(Cifar10, ParsesRecords) {
    auto bytes = cifar_record(3, 255);
    auto second = cifar_record(9, 0);
    second[1] = 51;  // first red pixel
    bytes.insert(bytes.end(), second.begin(), second.end());
    const auto p = temp_file("two.bin");
    write_bytes(p, bytes);
    const Dataset d = load_cifar10_bin(p);
    ASSERT_EQ(d.size(), 2u);
    EXPECT_EQ(d.dim(), 3072u);
    EXPECT_EQ(d.num_classes(), 10u);
    EXPECT_EQ(d.label(0), 3);
    EXPECT_EQ(d.label(1), 9);
    EXPECT_DOUBLE_EQ(d.row(0)[100], 1.0);
    EXPECT_DOUBLE_EQ(d.row(1)[0], 0.2);
    EXPECT_DOUBLE_EQ(d.row(1)[1], 0.0);
}

TEST(Cifar10, RejectsMalformed) {
    const auto p = temp_file("bad.bin");
    write_bytes(p, {});
    EXPECT_THROW(load_cifar10_bin(p), FormatError);
    auto rec = cifar_record(1, 0);
    rec.pop_back();
    write_bytes(p, rec);
    EXPECT_THROW(load_cifar10_bin(p), FormatError);
    write_bytes(p, cifar_record(10, 0));
    EXPECT_THROW(load_cifar10_bin(p), FormatError);
    EXPECT_THROW(load_cifar10_bin(temp_file("missing.bin")), FormatError);
}

TEST(FeatureFile, RoundTrip) {
    const Dataset d(3, 4, {0.5, -1.25, 2.0, 1.0, 0.0, -0.125}, {3, 0});
    const auto p = temp_file("feat.fedf");
    write_feature_file(p, d);
    EXPECT_EQ(fs::file_size(p), kFeatureHeaderBytes + 2 * (2 + 4 * 3));
    EXPECT_EQ(load_feature_file(p), d);  // values exactly representable in f32
}

TEST(FeatureFile, RejectsMalformed) {
    const Dataset d(2, 2, {1.0, 2.0}, {1});
    const auto p = temp_file("feat_bad.fedf");
    write_feature_file(p, d);
    std::ifstream in(p, std::ios::binary);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();

    auto wrong_magic = bytes;
    wrong_magic[0] = 'X';
    write_bytes(p, wrong_magic);
    EXPECT_THROW(load_feature_file(p), FormatError);

    auto truncated = bytes;
    truncated.pop_back();
    write_bytes(p, truncated);
    EXPECT_THROW(load_feature_file(p), FormatError);

    auto bad_label = bytes;
    bad_label[kFeatureHeaderBytes] = 7;
    write_bytes(p, bad_label);
    EXPECT_THROW(load_feature_file(p), FormatError);

    write_bytes(p, {'F', 'E', 'D'});
    EXPECT_THROW(load_feature_file(p), FormatError);
}
