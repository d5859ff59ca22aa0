#include <gtest/gtest.h>

#include "gradcheck.hpp"

namespace {

class GradientFamily : public ::testing::TestWithParam<size_t> {};

TEST_P(GradientFamily, MatchesCentralDifferences) {
  const auto family = gradcheck::families().at(GetParam());
  dass::Rng rng(1234 + GetParam());
  for (int i = 0; i < 25; ++i) {
    const gradcheck::Case c = family.make(rng);
    const gradcheck::Result r = gradcheck::run(c, rng);
    ASSERT_LT(r.forward_error, 1e-4) << family.name << " case " << i;
    ASSERT_LT(r.rel_error, 1e-3) << family.name << " case " << i;
  }
}

INSTANTIATE_TEST_SUITE_P(All, GradientFamily, ::testing::Range<size_t>(0, gradcheck::families().size()),
                         [](const ::testing::TestParamInfo<size_t>& info) {
                           std::string name = gradcheck::families().at(info.param).name;
                           for (char& ch : name)
                             if (!std::isalnum(static_cast<unsigned char>(ch))) ch = '_';
                           return name;
                         });

}  // namespace
