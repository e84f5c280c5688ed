#include <vector>

#include "doctest.h"
#include "sepsisfl/params.hpp"
#include "support.hpp"

using namespace sepsisfl;
using model::ParamLayout;
using model::ParamVector;
using numcore::Rng;

TEST_SUITE_BEGIN("params");

TEST_CASE("segment round-trip and flat layout") {
    auto layout = ParamLayout::make({{"a.W", {2, 3}}, {"a.b", {3}}, {"head.w", {4}}});
    ParamVector p(layout);
    CHECK(p.size() == 2 * 3 + 3 + 4);

    Rng rng(3);
    numcore::Tensor w = testsupport::random_tensor({2, 3}, rng);
    p.set_seg("a.W", w);
    numcore::Tensor back = p.seg_tensor("a.W");
    REQUIRE(back.size() == w.size());
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(back[i] == w[i]);

    // flat view aliases the same storage
    auto s = p.seg("a.b");
    s[0] = 42.0;
    CHECK(p.seg_tensor("a.b")[0] == 42.0);
}

TEST_CASE("serialize/deserialize is exact") {
    auto layout = ParamLayout::make({{"x", {5}}, {"y", {2, 2}}});
    ParamVector p(layout);
    Rng rng(4);
    for (auto& v : p.flat()) v = rng.normal() * 1e3;
    auto bytes = p.serialize();
    CHECK(bytes.size() == 32 + 8 * p.size());  // the wire-size formula used in byte accounting
    ParamVector q = ParamVector::deserialize(layout, bytes);
    CHECK(q.same_layout(p));
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(q.flat()[i] == p.flat()[i]);
}

TEST_CASE("layout digest detects shape changes") {
    auto a = ParamLayout::make({{"x", {5}}});
    auto b = ParamLayout::make({{"x", {6}}});
    CHECK(a->digest() != b->digest());
    auto c = ParamLayout::make({{"x", {5}}});
    CHECK(a->digest() == c->digest());

    ParamVector pa(a), pb(b);
    CHECK(!pa.same_layout(pb));
    // wrong byte count is rejected before anything is decoded
    CHECK_THROWS_AS(ParamVector::deserialize(b, pa.serialize()), ProtocolError);
    // same byte count but different shape is caught by the layout digest
    auto d = ParamLayout::make({{"x", {5, 1}}});
    CHECK(d->size() == a->size());
    CHECK(d->digest() != a->digest());
    CHECK_THROWS_AS(ParamVector::deserialize(d, pa.serialize()), ProtocolError);
}

TEST_SUITE_END();
