#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "mtlab/neural.hpp"
#include "support.hpp"

using namespace mtlab;
using neural::Dims;
using neural::Seq2SeqParams;
using neural::Variant;
using neural::Vec;
using testsupport::max_grad_rel_error;

namespace {

std::vector<uint32_t> random_ids(Rng& rng, int max_len, int vocab, int min_id = 0) {
  std::vector<uint32_t> ids;
  int len = 1 + int(rng.below(uint32_t(max_len)));
  for (int i = 0; i < len; ++i)
    ids.push_back(uint32_t(min_id) + rng.below(uint32_t(vocab - min_id)));
  return ids;
}

}  // namespace

TEST_CASE("init_params is seeded, bounded and seed-sensitive") {
  Dims dims{4, 5, 9, 8};
  auto a = neural::init_params(dims, 7);
  auto b = neural::init_params(dims, 7);
  auto c = neural::init_params(dims, 8);
  bool identical = true, differs = false;
  auto at = a.tensors(), bt = b.tensors(), ct = c.tensors();
  for (size_t t = 0; t < at.size(); ++t) {
    for (size_t k = 0; k < at[t].second->size(); ++k) {
      double v = (*at[t].second)[k];
      CHECK(v > -0.08);
      CHECK(v < 0.08);
      identical &= v == (*bt[t].second)[k];
      differs |= v != (*ct[t].second)[k];
    }
  }
  CHECK(identical);
  CHECK(differs);
  CHECK_THROWS(neural::init_params(Dims{0, 4, 5, 5}, 1));
}

TEST_CASE("encode matches an independent step-by-step evaluation") {
  Dims dims{3, 4, 6, 6};
  auto p = neural::init_params(dims, 13);
  std::vector<uint32_t> src = {1, 4, 2, 5};
  auto st = neural::encode(p, src);
  REQUIRE(st.h.size() == src.size());
  for (const auto& h : st.h) REQUIRE(h.size() == size_t(2 * dims.hidden));

  // reference scan with explicit loops
  auto scan_step = [&](const neural::GruCell& cell, const Vec& x, const Vec& hp) {
    int H = dims.hidden;
    Vec z(H), r(H), g(H), h(H);
    for (int i = 0; i < H; ++i) {
      double az = cell.bz[i], ar = cell.br[i];
      for (int k = 0; k < dims.embed; ++k) {
        az += cell.wz.at(i, k) * x[k];
        ar += cell.wr.at(i, k) * x[k];
      }
      for (int k = 0; k < H; ++k) {
        az += cell.uz.at(i, k) * hp[k];
        ar += cell.ur.at(i, k) * hp[k];
      }
      z[i] = 1.0 / (1.0 + std::exp(-az));
      r[i] = 1.0 / (1.0 + std::exp(-ar));
    }
    for (int i = 0; i < H; ++i) {
      double ah = cell.bh[i];
      for (int k = 0; k < dims.embed; ++k) ah += cell.wh.at(i, k) * x[k];
      for (int k = 0; k < H; ++k) ah += cell.uh.at(i, k) * (r[k] * hp[k]);
      g[i] = std::tanh(ah);
      h[i] = (1.0 - z[i]) * hp[i] + z[i] * g[i];
    }
    return h;
  };
  auto embed = [&](uint32_t id) {
    Vec x(dims.embed);
    for (int k = 0; k < dims.embed; ++k) x[k] = p.src_embed.at(int(id), k);
    return x;
  };

  Vec fwd(size_t(dims.hidden), 0.0);
  for (size_t j = 0; j < src.size(); ++j) {
    fwd = scan_step(p.enc_fwd, embed(src[j]), fwd);
    for (int k = 0; k < dims.hidden; ++k)
      REQUIRE(st.h[j][k] == Catch::Approx(fwd[k]).margin(1e-12));
  }
  Vec bwd(size_t(dims.hidden), 0.0);
  for (size_t j = src.size(); j-- > 0;) {
    bwd = scan_step(p.enc_bwd, embed(src[j]), bwd);
    for (int k = 0; k < dims.hidden; ++k)
      REQUIRE(st.h[j][size_t(dims.hidden) + k] == Catch::Approx(bwd[k]).margin(1e-12));
  }

  // reversing the input swaps the roles of the two chains
  std::vector<uint32_t> rev(src.rbegin(), src.rend());
  auto str = neural::encode(p, rev);
  Vec bwd_of_rev = scan_step(p.enc_bwd, embed(rev.back()), Vec(size_t(dims.hidden), 0.0));
  for (int k = 0; k < dims.hidden; ++k)
    REQUIRE(str.h.back()[size_t(dims.hidden) + k] ==
            Catch::Approx(bwd_of_rev[k]).margin(1e-12));

  CHECK_THROWS(neural::encode(p, {}));
  CHECK_THROWS(neural::encode(p, {99}));
}

TEST_CASE("zero parameters give identical encoder states") {
  Dims dims{3, 4, 6, 6};
  Seq2SeqParams p;
  p.init_shapes(dims);  // all zeros
  auto st = neural::encode(p, {1, 2, 3});
  for (const auto& h : st.h)
    for (double v : h) CHECK(v == 0.0);  // sigma(0)=0.5 gates on zero states
}

TEST_CASE("attention weights normalize and specialize") {
  Dims dims{3, 4, 6, 6};
  auto p = neural::init_params(dims, 3);
  Vec s(size_t(dims.hidden), 0.1);

  auto one = neural::encode(p, {2});
  auto a1 = neural::context_search(p, one, s);
  REQUIRE(a1.alpha.size() == 1);
  CHECK(a1.alpha[0] == Catch::Approx(1.0).margin(1e-12));
  for (size_t k = 0; k < a1.context.size(); ++k)
    CHECK(a1.context[k] == Catch::Approx(one.h[0][k]).margin(1e-12));

  auto many = neural::encode(p, {1, 2, 3, 4});
  auto am = neural::context_search(p, many, s);
  double sum = 0.0;
  for (double a : am.alpha) {
    CHECK(a >= 0.0);
    sum += a;
  }
  CHECK(sum == Catch::Approx(1.0).margin(1e-12));

  // zero energy vector -> uniform attention
  std::fill(p.attn_v.begin(), p.attn_v.end(), 0.0);
  auto uniform = neural::context_search(p, many, s);
  for (double a : uniform.alpha) CHECK(a == Catch::Approx(0.25).margin(1e-12));

  // fixed-length context is the final encoder state
  auto fixed = neural::context_endec(many);
  for (size_t k = 0; k < fixed.size(); ++k)
    CHECK(fixed[k] == Catch::Approx(many.h.back()[k]).margin(1e-12));
}

TEST_CASE("forward loss near ln(vocab) at initialization") {
  Dims dims{8, 16, 20, 12};
  auto p = neural::init_params(dims, 19);
  Rng rng(4);
  double expected = std::log(double(dims.tgt_vocab));
  for (int trial = 0; trial < 5; ++trial) {
    auto src = random_ids(rng, 6, dims.src_vocab);
    auto tgt = random_ids(rng, 6, dims.tgt_vocab);
    auto r = neural::forward_loss(p, src, tgt, Variant::kSearch);
    CHECK(r.loss >= 0.0);
    CHECK(r.loss == Catch::Approx(expected).epsilon(0.10));
    auto r2 = neural::forward_loss(p, src, tgt, Variant::kSearch);
    CHECK(r.loss == r2.loss);  // bit determinism
  }
}

TEST_CASE("endec context is constant across decoder steps") {
  Dims dims{4, 6, 9, 9};
  auto p = neural::init_params(dims, 23);
  std::vector<uint32_t> src = {3, 4, 5};
  std::vector<uint32_t> tgt = {3, 5, 4, 6};
  auto endec = neural::forward_loss(p, src, tgt, Variant::kEndec);
  for (size_t i = 1; i < endec.trace.context.size(); ++i)
    CHECK(endec.trace.context[i] == endec.trace.context[0]);
  auto search = neural::forward_loss(p, src, tgt, Variant::kSearch);
  bool varies = false;
  for (size_t i = 1; i < search.trace.context.size(); ++i)
    varies |= search.trace.context[i] != search.trace.context[0];
  CHECK(varies);
  // attention rows normalize at every step
  for (const auto& row : search.trace.alpha) {
    double sum = 0.0;
    for (double a : row) sum += a;
    CHECK(sum == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("analytic gradients match finite differences") {
  Rng rng(101);
  for (int draw = 0; draw < 10; ++draw) {
    Dims dims;
    dims.embed = 2 + int(rng.below(3));
    dims.hidden = 2 + int(rng.below(7));  // <= 8
    dims.src_vocab = 5 + int(rng.below(4));
    dims.tgt_vocab = 5 + int(rng.below(4));
    auto params = neural::init_params(dims, 1000 + draw);
    auto src = random_ids(rng, 4, dims.src_vocab);
    auto tgt = random_ids(rng, 4, dims.tgt_vocab);
    Variant variant = draw % 2 == 0 ? Variant::kSearch : Variant::kEndec;
    double err = max_grad_rel_error(params, src, tgt, variant);
    INFO("draw " << draw << " variant " << neural::variant_name(variant));
    REQUIRE(err < 1e-4);
  }
}

TEST_CASE("backward rejects empty targets, shapes match parameters") {
  Dims dims{3, 4, 6, 6};
  auto p = neural::init_params(dims, 31);
  CHECK_THROWS(neural::backward(p, {1, 2}, {}, Variant::kSearch));
  auto bw = neural::backward(p, {1, 2}, {3}, Variant::kSearch);
  auto gt = bw.grads.tensors();
  auto pt = p.tensors();
  REQUIRE(gt.size() == pt.size());
  for (size_t t = 0; t < gt.size(); ++t)
    CHECK(gt[t].second->size() == pt[t].second->size());

  // overlong pair rejected
  std::vector<uint32_t> huge(60, 1);
  CHECK_THROWS(neural::forward_loss(p, huge, {1}, Variant::kSearch));
}

TEST_CASE("training reduces smoothed loss on a tiny copy task") {
  Rng rng(55);
  std::vector<std::pair<std::vector<uint32_t>, std::vector<uint32_t>>> pairs;
  for (int i = 0; i < 150; ++i) {
    auto seq = random_ids(rng, 5, 8, 3);
    pairs.push_back({seq, seq});
  }
  for (auto variant : {Variant::kSearch, Variant::kEndec}) {
    neural::TrainConfig cfg;
    cfg.variant = variant;
    cfg.hidden = 16;
    cfg.embed = 12;
    cfg.max_updates = 600;
    cfg.learning_rate = 0.3;
    cfg.seed = 7;
    auto r = neural::train(pairs, 8, 8, cfg);
    REQUIRE(r.losses.size() == 600);
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 100; ++i) {
      head += r.losses[i];
      tail += r.losses[r.losses.size() - 100 + i];
    }
    INFO(neural::variant_name(variant));
    CHECK(tail < head);

    auto r2 = neural::train(pairs, 8, 8, cfg);
    CHECK(r2.losses == r.losses);  // bit-identical history

    if (variant == Variant::kSearch) {
      // trained attention produces a step-varying context on a longer input
      std::vector<uint32_t> probe = {3, 4, 5, 6};
      auto fw = neural::forward_loss(r.params, probe, probe, variant);
      bool varies = false;
      for (size_t i = 1; i < fw.trace.context.size(); ++i)
        varies |= fw.trace.context[i] != fw.trace.context[0];
      CHECK(varies);
    }
  }
}

TEST_CASE("greedy and beam translation agree at beam 1") {
  Dims dims{4, 6, 9, 9};
  auto p = neural::init_params(dims, 47);
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    auto src = random_ids(rng, 5, dims.src_vocab);
    auto g = neural::translate_greedy(p, src, Variant::kSearch, 12);
    auto b = neural::translate_beam(p, src, Variant::kSearch, 1, 12);
    CHECK(g.target == b.target);
    CHECK(g.target.size() <= 12);
  }
}

TEST_CASE("checkpoint round-trips parameters and variant") {
  Dims dims{3, 5, 7, 8};
  auto p = neural::init_params(dims, 77);
  auto path = (std::filesystem::temp_directory_path() / "params_rt.pnm").string();
  neural::save_params(p, Variant::kEndec, path);
  auto loaded = neural::load_params(path);
  CHECK(loaded.variant == Variant::kEndec);
  REQUIRE(loaded.params.dims.hidden == dims.hidden);
  auto lt = loaded.params.tensors();
  auto pt = p.tensors();
  for (size_t t = 0; t < pt.size(); ++t) REQUIRE(*lt[t].second == *pt[t].second);

  // translations identical through the round trip
  std::vector<uint32_t> src = {3, 4, 5};
  CHECK(neural::translate_greedy(p, src, Variant::kEndec, 8).target ==
        neural::translate_greedy(loaded.params, src, Variant::kEndec, 8).target);

  auto bad = (std::filesystem::temp_directory_path() / "params_bad.pnm").string();
  {
    std::ofstream out(bad, std::ios::binary);
    out << "JUNK";
  }
  CHECK_THROWS(neural::load_params(bad));
}
