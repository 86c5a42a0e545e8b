#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "ramreid/error.hpp"
#include "ramreid/ops.hpp"
#include "ramreid/serialize.hpp"
#include "ramreid/tensor.hpp"

namespace ramreid {
namespace {

using testing::gradcheck;
using testing::random_tensor;

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

TEST(Tensor, FromDataRejectsMismatchedLength) {
  EXPECT_THROW(Tensor::from_data({2, 3}, {1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor::from_data({2, 0}, {}), ShapeError);
}

TEST(Tensor, NumelMatchesShapeProduct) {
  const Tensor t = Tensor::zeros({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(t.dim(2), 4u);
  EXPECT_THROW(t.dim(3), ShapeError);
}

TEST(Tensor, GradientHasDataLength) {
  Tensor t = Tensor::zeros({3, 5}, true);
  EXPECT_FALSE(t.has_grad());
  t.zero_grad();
  EXPECT_EQ(t.grad().size(), t.numel());
}

TEST(Ops, MatmulByIdentityIsUnchanged) {
  const Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(values(matmul(a, identity(2))), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Ops, AddZerosIsUnchanged) {
  Rng rng(3);
  const Tensor x = random_tensor(rng, {3, 4});
  EXPECT_EQ(values(add(x, zeros_like(x))), values(x));
}

TEST(Ops, MatmulMatchesTripleLoop) {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor a = random_tensor(rng, {3, 4});
    const Tensor b = random_tensor(rng, {4, 2});
    const auto expect = testing::naive_matmul(values(a), values(b), 3, 4, 2);
    EXPECT_EQ(values(matmul(a, b)), expect);
  }
}

TEST(Ops, ShapeMismatchNamesBothShapes) {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({4});
  try {
    add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(2, 3)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("(4)"), std::string::npos) << msg;
  }
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("(2, 3) and (2, 3)"), std::string::npos);
  }
}

TEST(Ops, BroadcastOverLeadingDimensions) {
  const Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  const Tensor b = Tensor::from_data({2}, {10, 20});
  EXPECT_EQ(values(add(a, b)), (std::vector<double>{11, 22, 13, 24}));
  EXPECT_EQ(values(mul(a, b)), (std::vector<double>{10, 40, 30, 80}));
}

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::zeros({2, 3}, true);
  sum(x).backward();
  EXPECT_EQ(values(Tensor::from_data({6}, {x.grad().begin(), x.grad().end()})),
            std::vector<double>(6, 1.0));
}

TEST(Backward, SquareGivesTwiceInput) {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  sum(mul(x, x)).backward();
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{2, 4}));
}

TEST(Backward, RejectsNonScalarLoss) {
  Tensor x = Tensor::zeros({2}, true);
  EXPECT_THROW(scale(x, 2.0).backward(), ShapeError);
}

TEST(Backward, TwoConsumersAccumulate) {
  Rng rng(5);
  Tensor x = random_tensor(rng, {4});
  x.set_requires_grad(true);
  const Tensor w1 = random_tensor(rng, {4});
  const Tensor w2 = random_tensor(rng, {4});
  // x feeds both products.
  sum(add(mul(x, w1), mul(x, w2))).backward();
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_DOUBLE_EQ(x.grad()[i], w1.data()[i] + w2.data()[i]);
  }
}

TEST(Backward, GradientsAccumulateAcrossCalls) {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  sum(x).backward();
  sum(x).backward();
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{2, 2}));
}

TEST(Backward, SliceGradientLandsOnMappedElements) {
  Tensor base = Tensor::zeros({2, 5, 3}, true);
  const Tensor view = slice(base, 1, 1, 3);
  Rng rng(1);
  const Tensor r = random_tensor(rng, view.shape());
  sum(mul(view, r)).backward();
  for (std::size_t a = 0; a < 2; ++a) {
    for (std::size_t b = 0; b < 5; ++b) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double g = base.grad()[(a * 5 + b) * 3 + c];
        if (b >= 1 && b < 3) {
          EXPECT_EQ(g, r.data()[(a * 2 + (b - 1)) * 3 + c]);
        } else {
          EXPECT_EQ(g, 0.0);
        }
      }
    }
  }
}

TEST(Backward, ReshapeMapsElementsInOrder) {
  Tensor base = Tensor::zeros({2, 6}, true);
  const Tensor view = reshape(base, {3, 4});
  const Tensor r = Tensor::from_data({3, 4}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
  sum(mul(view, r)).backward();
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(base.grad()[i], static_cast<double>(i));
}

TEST(Backward, NoGradGuardRecordsNothing) {
  Tensor x = Tensor::zeros({2}, true);
  NoGradGuard guard;
  const Tensor y = scale(x, 3.0);
  EXPECT_TRUE(y.is_leaf());
  EXPECT_FALSE(y.requires_grad());
}

TEST(ComputeGraph, TopologicalAndVisitedOnce) {
  Rng rng(9);
  Tensor a = random_tensor(rng, {3});
  a.set_requires_grad(true);
  const Tensor b = mul(a, a);
  const Tensor c = add(b, a);
  const Tensor d = add(c, b);
  const Tensor loss = sum(d);
  const ComputeGraph g = ComputeGraph::trace(loss);
  std::set<const void*> seen;
  for (const Tensor& t : g.tensors()) {
    EXPECT_TRUE(seen.insert(t.id()).second) << "tensor visited twice";
    if (t.grad_fn()) {
      for (const Tensor& in : t.grad_fn()->inputs) {
        EXPECT_TRUE(seen.count(in.id())) << "input after its consumer";
      }
    }
  }
  EXPECT_EQ(g.nodes().size(), 4u);
}

struct OpCase {
  const char* name;
  std::vector<Shape> shapes;
  testing::TensorFn fn;
};

TEST(GradCheck, TensorOps) {
  const std::vector<std::size_t> rows = {0, 2, 2, 1};
  const std::vector<OpCase> cases = {
      {"add", {{3, 4}, {3, 4}}, [](const auto& in) { return add(in[0], in[1]); }},
      {"add-broadcast", {{2, 3, 4}, {4}}, [](const auto& in) { return add(in[0], in[1]); }},
      {"sub", {{3, 4}, {4}}, [](const auto& in) { return sub(in[0], in[1]); }},
      {"mul", {{3, 4}, {3, 4}}, [](const auto& in) { return mul(in[0], in[1]); }},
      {"mul-broadcast", {{5, 4}, {4}}, [](const auto& in) { return mul(in[0], in[1]); }},
      {"scale", {{6}}, [](const auto& in) { return scale(in[0], -1.7); }},
      {"matmul", {{3, 4}, {4, 5}}, [](const auto& in) { return matmul(in[0], in[1]); }},
      {"sum", {{2, 5}}, [](const auto& in) { return sum(in[0]); }},
      {"mean", {{2, 5}}, [](const auto& in) { return mean(in[0]); }},
      {"reshape", {{2, 6}}, [](const auto& in) { return reshape(in[0], {4, 3}); }},
      {"slice", {{2, 5, 3}}, [](const auto& in) { return slice(in[0], 1, 1, 4); }},
      {"select_rows", {{3, 4}}, [rows](const auto& in) { return select_rows(in[0], rows); }},
  };
  Rng rng(2024);
  for (const OpCase& c : cases) {
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<Tensor> inputs;
      for (const Shape& s : c.shapes) inputs.push_back(random_tensor(rng, s));
      const auto res = gradcheck(c.fn, inputs, rng);
      EXPECT_LE(res.max_relative_error, 1e-6) << c.name << " trial " << trial;
    }
  }
}

TEST(GradCheck, ReluAwayFromKink) {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = testing::spread_tensor(rng, {4, 6});
    const auto res = gradcheck([](const auto& in) { return relu(in[0]); }, {x}, rng);
    EXPECT_LE(res.max_relative_error, 1e-6);
  }
}

TEST(Serialize, RoundTripIsBitwise) {
  Rng rng(4);
  const Tensor t = random_tensor(rng, {2, 3, 5}, -1e6, 1e6);
  std::stringstream buf;
  write_tensor(buf, t);
  const Tensor back = read_tensor(buf);
  EXPECT_EQ(back.shape(), t.shape());
  EXPECT_EQ(values(back), values(t));
}

TEST(Serialize, LayoutIsMagicRankDimsPayload) {
  const Tensor t = Tensor::from_data({1, 2}, {1.0, -2.0});
  std::stringstream buf;
  write_tensor(buf, t);
  const std::string bytes = buf.str();
  ASSERT_EQ(bytes.size(), 4u + 4u + 2 * 8u + 2 * 8u);
  EXPECT_EQ(bytes.substr(0, 4), "RAMT");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 2u);  // rank, little-endian
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 1u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 2u);
  // 1.0 = 0x3FF0000000000000, stored low byte first.
  EXPECT_EQ(static_cast<unsigned char>(bytes[31]), 0x3Fu);
  EXPECT_EQ(static_cast<unsigned char>(bytes[30]), 0xF0u);
}

TEST(Serialize, RejectsBadMagicAndTruncation) {
  std::stringstream bad("XXXX");
  EXPECT_THROW(read_tensor(bad), ParseError);
  const Tensor t = Tensor::from_data({3}, {1, 2, 3});
  std::stringstream buf;
  write_tensor(buf, t);
  std::string bytes = buf.str();
  bytes.resize(bytes.size() - 3);
  std::stringstream cut(bytes);
  EXPECT_THROW(read_tensor(cut), ParseError);
}

}  // namespace
}  // namespace ramreid
