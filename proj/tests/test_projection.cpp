#include <doctest.h>

#include "meshrec/projection.hpp"
#include "support.hpp"

using namespace meshrec;
using meshrec::testing::random_keypoints;
using meshrec::testing::rel_err;

namespace {

Keypoints3D single_point(Scalar x, Scalar y, Scalar z) {
    Keypoints3D k;
    k.coords.resize(1, 3);
    k.coords << x, y, z;
    k.visible = {1};
    k.part = {Part::Body};
    return k;
}

}  // namespace

TEST_CASE("perspective projection evaluates the pinhole equations") {
    PerspectiveCamera cam;
    cam.f_x = cam.f_y = 1000;
    cam.t_x = cam.t_y = 0;
    cam.d = 5;

    CHECK(project_perspective(single_point(0.5, 0, 0), cam).coords(0, 0) ==
          doctest::Approx(100).epsilon(1e-12));
    CHECK(project_perspective(single_point(0.5, 0, 5), cam).coords(0, 0) ==
          doctest::Approx(50).epsilon(1e-12));

    CHECK_THROWS_AS(project_perspective(single_point(0.5, 0, -5), cam), BehindCameraError);
    try {
        project_perspective(single_point(0.5, 0, -5), cam);
    } catch (const BehindCameraError& e) {
        REQUIRE(e.indices.size() == 1);
        CHECK(e.indices[0] == 0);
    }

    // Invisible keypoints are never validated.
    Keypoints3D hidden = single_point(0.5, 0, -5);
    hidden.visible = {0};
    const Keypoints2D out = project_perspective(hidden, cam);
    CHECK(out.coords(0, 0) == 0);
}

TEST_CASE("weak-perspective projection ignores depth") {
    WeakPerspectiveCamera cam;
    cam.s = 200;
    cam.t_u = cam.t_v = 0;
    CHECK(project_weak(single_point(0.5, 0, 0), cam).coords(0, 0) == doctest::Approx(100));
    CHECK(project_weak(single_point(0.5, 0, 5), cam).coords(0, 0) == doctest::Approx(100));

    WeakPerspectiveCamera shifted{1, 7, -3};
    const Keypoints2D o = project_weak(single_point(0, 0, 0), shifted);
    CHECK(o.coords(0, 0) == doctest::Approx(7));
    CHECK(o.coords(0, 1) == doctest::Approx(-3));
}

TEST_CASE("d2s scale factor") {
    CHECK(d2s_scale(0, 5) == doctest::Approx(1.0));
    CHECK(d2s_scale(5, 5) == doctest::Approx(0.5));
    Scalar prev = d2s_scale(-1, 5);
    for (Scalar z = -0.5; z < 20; z += 0.5) {
        const Scalar s = d2s_scale(z, 5);
        CHECK(s < prev);
        prev = s;
    }
    CHECK_THROWS_AS(d2s_scale(-5, 5), BehindCameraError);
}

TEST_CASE("d2s projection rescales the weak-perspective output") {
    D2SCamera cam;
    cam.s = 200;
    cam.t_u = cam.t_v = 0;
    cam.d = 5;
    CHECK(project_d2s(single_point(0.5, 0, 0), cam).coords(0, 0) == doctest::Approx(100));
    // Foreshortened point agrees with the perspective camera at f = s * d.
    CHECK(project_d2s(single_point(0.5, 0, 5), cam).coords(0, 0) == doctest::Approx(50));

    // Large d degenerates to weak perspective.
    D2SCamera far_cam = cam;
    far_cam.d = 1e9;
    SplitMix64 rng(11);
    const Keypoints3D j = random_keypoints(rng, 20, 2.0);
    const Keypoints2D weak = project_weak(j, WeakPerspectiveCamera{cam.s, cam.t_u, cam.t_v});
    const Keypoints2D d2s = project_d2s(j, far_cam);
    for (int i = 0; i < j.count(); ++i)
        for (int c = 0; c < 2; ++c)
            CHECK(rel_err(d2s.coords(i, c), weak.coords(i, c)) < 1e-6);
}

TEST_CASE("d2s with s = f/d reproduces perspective exactly") {
    SplitMix64 rng(12);
    Scalar worst = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int k = 2 + rng.index(20);
        const Keypoints3D j = random_keypoints(rng, k, 2.0);
        PerspectiveCamera p;
        p.f_x = p.f_y = rng.uniform(400, 2000);
        p.t_x = rng.uniform(-1, 1);
        p.t_y = rng.uniform(-1, 1);
        p.d = rng.uniform(3, 60);
        D2SCamera d2s{p.f_x / p.d, p.f_x * p.t_x / p.d, p.f_y * p.t_y / p.d, p.d};
        const Keypoints2D a = project_perspective(j, p);
        const Keypoints2D b = project_d2s(j, d2s);
        worst = std::max(worst, (a.coords - b.coords).cwiseAbs().maxCoeff());
    }
    CHECK(worst < 1e-9);
}

TEST_CASE("d2s-to-weak gap halves when the distance doubles") {
    SplitMix64 rng(13);
    const Keypoints3D j = random_keypoints(rng, 40, 2.0);  // extent 2
    const Scalar extent = 2.0;
    const WeakPerspectiveCamera weak{300, 12, -5};
    const Scalar max_abs_z = j.coords.col(2).cwiseAbs().maxCoeff();
    const Scalar max_abs_x = j.coords.col(0).cwiseAbs().maxCoeff();

    auto sup_gap = [&](Scalar d) {
        const D2SCamera cam{weak.s, weak.t_u, weak.t_v, d};
        const Keypoints2D a = project_d2s(j, cam);
        const Keypoints2D b = project_weak(j, weak);
        return (a.coords - b.coords).cwiseAbs().maxCoeff();
    };

    Scalar prev = sup_gap(10 * extent);
    for (const Scalar factor : {20.0, 40.0, 80.0}) {
        const Scalar gap = sup_gap(factor * extent);
        const Scalar ratio = gap / prev;
        CHECK(ratio > 0.45);
        CHECK(ratio < 0.55);
        prev = gap;
    }

    // Bound on the gap; the denominator accounts for negative-z keypoints.
    for (const Scalar factor : {10.0, 20.0, 40.0, 80.0}) {
        const Scalar d = factor * extent;
        const Scalar bound =
            (weak.s * max_abs_x + std::abs(weak.t_u)) * max_abs_z / (d - max_abs_z);
        CHECK(sup_gap(d) <= bound * (1 + 1e-12));
    }
}

TEST_CASE("approximation gap formulas") {
    SUBCASE("zero at the center plane") {
        const auto gap = approximation_gap(single_point(0.3, 0.2, 0), 1000, 0.1, 5);
        CHECK(gap.delta_s[0] == doctest::Approx(0).epsilon(1e-15));
        CHECK(gap.delta_t_u[0] == doctest::Approx(0).epsilon(1e-15));
    }
    SUBCASE("worked example cross-checked against the direct difference") {
        const auto gap = approximation_gap(single_point(0.3, 0, 5), 1000, 0, 5);
        CHECK(gap.delta_s[0] == doctest::Approx(100));
        CHECK(gap.delta_s[0] == doctest::Approx(1000.0 / 5 - 1000.0 / 10));
    }
    SUBCASE("vanishes as d grows") {
        Scalar prev = 1e30;
        for (const Scalar d : {10.0, 100.0, 1000.0, 10000.0}) {
            const auto gap = approximation_gap(single_point(0.3, 0, 1), 1000, 0.5, d);
            CHECK(std::abs(gap.delta_s[0]) < prev);
            prev = std::abs(gap.delta_s[0]);
        }
        CHECK(prev < 1e-3);
    }
    SUBCASE("singular depth raises") {
        CHECK_THROWS_AS(approximation_gap(single_point(0, 0, -5), 1000, 0, 5),
                        BehindCameraError);
    }
}

TEST_CASE("approximation gap reconstructs the perspective projection") {
    SplitMix64 rng(14);
    for (int trial = 0; trial < 1000; ++trial) {
        const Keypoints3D j = random_keypoints(rng, 8, 2.0);
        const Scalar f = rng.uniform(400, 2000);
        const Scalar t_x = rng.uniform(-1, 1);
        const Scalar d = rng.uniform(3, 50);
        const auto gap = approximation_gap(j, f, t_x, d);
        PerspectiveCamera cam;
        cam.f_x = cam.f_y = f;
        cam.t_x = t_x;
        cam.t_y = 0;
        cam.d = d;
        const Keypoints2D persp = project_perspective(j, cam);
        for (int i = 0; i < j.count(); ++i) {
            const Scalar u = (f / d - gap.delta_s[i]) * j.coords(i, 0) +
                             (f * t_x / d - gap.delta_t_u[i]);
            CHECK(std::abs(u - persp.coords(i, 0)) < 1e-9);
        }
    }
}

TEST_CASE("projection jacobians") {
    SUBCASE("weak-perspective entries are exact") {
        SplitMix64 rng(15);
        const Keypoints3D j = random_keypoints(rng, 5, 2.0);
        const WeakPerspectiveCamera cam{150, 3, -8};
        const ProjectionJacobian pj = projection_jacobian(j, CameraModel{cam});
        for (int i = 0; i < j.count(); ++i) {
            CHECK(pj.d_point(2 * i, 0) == doctest::Approx(cam.s));
            CHECK(pj.d_point(2 * i, 2) == 0.0);
            CHECK(pj.d_camera(2 * i, 1) == 1.0);
        }
    }
    SUBCASE("d2s depth sensitivity at the center plane") {
        const Keypoints3D j = single_point(0.4, -0.2, 0);
        const D2SCamera cam{220, 9, 2, 6};
        const ProjectionJacobian pj = projection_jacobian(j, CameraModel{cam});
        CHECK(pj.d_point(0, 2) == doctest::Approx(-(cam.s * 0.4 + cam.t_u) / cam.d));
        CHECK(pj.d_point(1, 2) == doctest::Approx(-(cam.s * -0.2 + cam.t_v) / cam.d));
    }
    SUBCASE("all camera kinds match finite differences") {
        SplitMix64 rng(16);
        const Scalar h = 1e-6;
        for (int trial = 0; trial < 100; ++trial) {
            const Keypoints3D j = random_keypoints(rng, 6, 2.0);
            CameraModel cam;
            switch (trial % 3) {
                case 0:
                    cam = PerspectiveCamera{rng.uniform(500, 1500), rng.uniform(500, 1500),
                                            rng.uniform(-1, 1), rng.uniform(-1, 1),
                                            rng.uniform(4, 40)};
                    break;
                case 1:
                    cam = WeakPerspectiveCamera{rng.uniform(50, 400), rng.uniform(-50, 50),
                                                rng.uniform(-50, 50)};
                    break;
                default:
                    cam = D2SCamera{rng.uniform(50, 400), rng.uniform(-50, 50),
                                    rng.uniform(-50, 50), rng.uniform(4, 40)};
                    break;
            }
            const ProjectionJacobian pj = projection_jacobian(j, cam);

            // Relative error is measured against the row scale so that
            // finite-difference cancellation noise on near-zero entries of an
            // otherwise large row cannot dominate.
            for (int i = 0; i < j.count(); ++i)
                for (int a = 0; a < 3; ++a) {
                    Keypoints3D jp = j, jm = j;
                    jp.coords(i, a) += h;
                    jm.coords(i, a) -= h;
                    const Keypoints2D up = project(jp, cam);
                    const Keypoints2D um = project(jm, cam);
                    for (int c = 0; c < 2; ++c) {
                        const Scalar fd = (up.coords(i, c) - um.coords(i, c)) / (2 * h);
                        const Scalar scale =
                            std::max(pj.d_point.row(2 * i + c).cwiseAbs().maxCoeff(), 1e-6);
                        CHECK(std::abs(pj.d_point(2 * i + c, a) - fd) / scale < 1e-5);
                    }
                }

            VecX params = camera_params(cam);
            for (int p = 0; p < params.size(); ++p) {
                VecX pp = params, pm = params;
                pp[p] += h;
                pm[p] -= h;
                const Keypoints2D up = project(j, camera_from_params(kind_of(cam), pp));
                const Keypoints2D um = project(j, camera_from_params(kind_of(cam), pm));
                for (int i = 0; i < j.count(); ++i)
                    for (int c = 0; c < 2; ++c) {
                        const Scalar fd = (up.coords(i, c) - um.coords(i, c)) / (2 * h);
                        const Scalar scale =
                            std::max(pj.d_camera.row(2 * i + c).cwiseAbs().maxCoeff(), 1e-6);
                        CHECK(std::abs(pj.d_camera(2 * i + c, p) - fd) / scale < 1e-5);
                    }
            }
        }
    }
}

TEST_CASE("depth-translation gauge") {
    SplitMix64 rng(17);
    const Keypoints3D j = random_keypoints(rng, 12, 2.0);
    Keypoints3D shifted = j;
    shifted.coords.col(2).array() += 0.6;

    const WeakPerspectiveCamera weak{200, 5, 5};
    CHECK(exact_equal(project_weak(j, weak).coords, project_weak(shifted, weak).coords));

    const D2SCamera d2s{200, 5, 5, 6};
    CHECK((project_d2s(j, d2s).coords - project_d2s(shifted, d2s).coords)
              .cwiseAbs()
              .maxCoeff() > 1e-3);
    PerspectiveCamera persp;
    persp.d = 6;
    CHECK((project_perspective(j, persp).coords - project_perspective(shifted, persp).coords)
              .cwiseAbs()
              .maxCoeff() > 1e-3);
}
