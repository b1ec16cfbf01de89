#include <doctest.h>

#include <cmath>

#include "optim.hpp"

using namespace snds;
using namespace snds::ad;

namespace {

Parameter make_param(double value, double grad) {
  Parameter p("p", Tensor::scalar(value));
  p.grad()[0] = grad;
  return p;
}

}  // namespace

TEST_CASE("plain sgd step") {
  Parameter p = make_param(1.0, 1.0);
  SgdOptimizer opt({.lr = 0.1, .momentum = 0.0, .weight_decay = 0.0});
  Parameter* ptr = &p;
  opt.step({&ptr, 1});
  CHECK(p.value()[0] == doctest::Approx(0.9));
  // gradient untouched until explicit zeroing
  CHECK(p.grad()[0] == 1.0);
  opt.zero_grad({&ptr, 1});
  CHECK(p.grad()[0] == 0.0);
}

TEST_CASE("momentum recursion over two identical-gradient steps") {
  Parameter p = make_param(0.0, 1.0);
  SgdOptimizer opt({.lr = 0.1, .momentum = 0.9, .weight_decay = 0.0});
  Parameter* ptr = &p;
  opt.step({&ptr, 1});
  CHECK(p.value()[0] == doctest::Approx(-0.1));
  opt.step({&ptr, 1});  // velocity 0.9*1 + 1 = 1.9
  CHECK(p.value()[0] == doctest::Approx(-0.29));
}

TEST_CASE("weight decay acts without a gradient") {
  Parameter p = make_param(1.0, 0.0);
  SgdOptimizer opt({.lr = 0.01, .momentum = 0.0, .weight_decay = 1e-4});
  Parameter* ptr = &p;
  opt.step({&ptr, 1});
  CHECK(p.value()[0] == doctest::Approx(0.999999).epsilon(1e-12));
}

TEST_CASE("negative learning rate is a config error") {
  CHECK_THROWS_AS(SgdOptimizer({.lr = -0.1, .momentum = 0.0, .weight_decay = 0.0}), ConfigError);
  SgdOptimizer opt({.lr = 0.1, .momentum = 0.0, .weight_decay = 0.0});
  CHECK_THROWS_AS(opt.set_lr(-1.0), ConfigError);
}

TEST_CASE("cosine rampdown endpoints and midpoint") {
  CHECK(cosine_rampdown(0, 10, 0.01) == doctest::Approx(0.01));
  CHECK(cosine_rampdown(10, 10, 0.01) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(cosine_rampdown(5, 10, 0.01) == doctest::Approx(0.005));
  CHECK_THROWS_AS(cosine_rampdown(0, 0, 0.01), ConfigError);
  CHECK_THROWS_AS(cosine_rampdown(11, 10, 0.01), ConfigError);
  CHECK_THROWS_AS(cosine_rampdown(-1, 10, 0.01), ConfigError);
}
