#include "meshrec/metrics.hpp"

#include <Eigen/SVD>

#include "meshrec/json_io.hpp"

namespace meshrec {

Scalar mpjpe(const Points3& pred, const Points3& gt, const std::vector<std::uint8_t>& visible) {
    if (pred.rows() != gt.rows())
        throw DimensionError("mpjpe: pred/gt keypoint counts differ");
    std::vector<double> dist;
    dist.reserve(static_cast<size_t>(pred.rows()));
    for (int i = 0; i < pred.rows(); ++i)
        if (visible[static_cast<size_t>(i)])
            dist.push_back((pred.row(i) - gt.row(i)).norm());
    if (dist.empty()) throw EmptyEvaluationError("mpjpe: no visible keypoints");
    return pairwise_mean(dist);
}

ProcrustesResult procrustes_align(const Points3& pred, const Points3& gt,
                                  const std::vector<std::uint8_t>& visible, bool with_scale) {
    if (pred.rows() != gt.rows())
        throw DimensionError("procrustes_align: pred/gt keypoint counts differ");
    std::vector<int> idx;
    for (int i = 0; i < pred.rows(); ++i)
        if (visible[static_cast<size_t>(i)]) idx.push_back(i);
    const int n = static_cast<int>(idx.size());
    if (n < 3) throw DegenerateAlignmentError("procrustes_align: needs >= 3 visible keypoints");

    Vec3 mu_p = Vec3::Zero(), mu_g = Vec3::Zero();
    for (int i : idx) {
        mu_p += pred.row(i).transpose();
        mu_g += gt.row(i).transpose();
    }
    mu_p /= n;
    mu_g /= n;

    MatX xp(n, 3), xg(n, 3);
    for (int r = 0; r < n; ++r) {
        xp.row(r) = pred.row(idx[static_cast<size_t>(r)]) - mu_p.transpose();
        xg.row(r) = gt.row(idx[static_cast<size_t>(r)]) - mu_g.transpose();
    }

    // Collinear (or coincident) clouds have no well-defined rotation.
    auto rank2_check = [&](const MatX& x, const char* name) {
        Eigen::JacobiSVD<MatX> svd(x);
        const VecX sv = svd.singularValues();
        if (sv.size() < 2 || sv[1] <= 1e-9 * std::max(sv[0], Scalar(1e-12)))
            throw DegenerateAlignmentError(std::string("procrustes_align: ") + name +
                                           " keypoints are rank-deficient");
    };
    rank2_check(xp, "pred");
    rank2_check(xg, "gt");

    const Mat3 cov = (xg.transpose() * xp) / n;
    Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 s_fix = Mat3::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) s_fix(2, 2) = -1;

    ProcrustesResult out;
    out.rotation = svd.matrixU() * s_fix * svd.matrixV().transpose();
    if (with_scale) {
        const Scalar var_p = xp.squaredNorm() / n;
        out.scale = (svd.singularValues().asDiagonal() * s_fix).trace() / var_p;
    }
    out.translation = mu_g - out.scale * out.rotation * mu_p;

    out.aligned_pred.resize(pred.rows(), 3);
    for (int i = 0; i < pred.rows(); ++i)
        out.aligned_pred.row(i) =
            (out.scale * out.rotation * pred.row(i).transpose() + out.translation).transpose();
    for (int i : idx) out.residual += (out.aligned_pred.row(i) - gt.row(i)).squaredNorm();
    return out;
}

Scalar pa_mpjpe(const Points3& pred, const Points3& gt,
                const std::vector<std::uint8_t>& visible, bool with_scale) {
    const ProcrustesResult a = procrustes_align(pred, gt, visible, with_scale);
    return mpjpe(a.aligned_pred, gt, visible);
}

EvalReport bucketed_report(const std::vector<SampleEval>& samples, BucketKey key) {
    if (samples.empty()) throw EmptyEvaluationError("bucketed_report: no samples");
    EvalReport report;
    std::map<std::string, std::vector<double>> m_by, pa_by;
    std::vector<double> m_all, pa_all;
    for (const SampleEval& s : samples) {
        const std::string& label =
            key == BucketKey::Distance ? s.distance_bucket : s.viewpoint_bucket;
        if (label.empty())
            throw LabelingError("bucketed_report: sample is missing its bucket label");
        m_by[label].push_back(s.mpjpe);
        pa_by[label].push_back(s.pa_mpjpe);
        m_all.push_back(s.mpjpe);
        pa_all.push_back(s.pa_mpjpe);
    }
    report.overall.n = static_cast<int>(samples.size());
    report.overall.mpjpe = pairwise_mean(m_all);
    report.overall.pa_mpjpe = pairwise_mean(pa_all);
    for (const auto& [label, v] : m_by) {
        EvalReport::Stats st;
        st.n = static_cast<int>(v.size());
        st.mpjpe = pairwise_mean(v);
        st.pa_mpjpe = pairwise_mean(pa_by[label]);
        report.buckets.emplace(label, st);
    }
    return report;
}

std::string EvalReport::to_csv() const {
    std::string out = "bucket,n,mpjpe,pa_mpjpe\n";
    for (const auto& [label, st] : buckets)
        out += label + "," + std::to_string(st.n) + "," + format_double(st.mpjpe) + "," +
               format_double(st.pa_mpjpe) + "\n";
    out += "overall," + std::to_string(overall.n) + "," + format_double(overall.mpjpe) + "," +
           format_double(overall.pa_mpjpe) + "\n";
    return out;
}

}  // namespace meshrec
