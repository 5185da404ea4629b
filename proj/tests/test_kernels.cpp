#include <doctest.h>

#include "nnshrink/kernels.hpp"
#include "nnshrink/synthetic.hpp"

using namespace nnshrink;

TEST_CASE("parallel kernels agree with the serial reference") {
  synthetic::Rng rng(21);
  for (auto [N, n] : {std::pair{1, 3}, std::pair{7, 40}, std::pair{33, 20}}) {
    const Matrix x = synthetic::gaussian_matrix(N, n, rng);
    Vector w = synthetic::gaussian_matrix(n, 1, rng).col(0).cwiseAbs();
    const Matrix a = synthetic::random_spd(N, rng);

    const Matrix s = kernels::scatter(x, 0.25);
    CHECK((s - kernels::reference::scatter(x, 0.25)).cwiseAbs().maxCoeff() <= 1e-13 * s.norm());
    CHECK(s == s.transpose());

    const Matrix sw = kernels::weighted_scatter(x, w);
    CHECK((sw - kernels::reference::weighted_scatter(x, w)).cwiseAbs().maxCoeff() <= 1e-13 * sw.norm());
    CHECK(sw == sw.transpose());

    const double d = kernels::outer_deviation_sum(x, s);
    CHECK(d == doctest::Approx(kernels::reference::outer_deviation_sum(x, s)).epsilon(1e-12));

    const Vector q = kernels::column_quadratic_forms(x, a);
    CHECK((q - kernels::reference::column_quadratic_forms(x, a)).cwiseAbs().maxCoeff() <= 1e-12 * q.norm());
  }
}
