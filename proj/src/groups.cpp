#include "liepush/groups.hpp"

#include <cmath>
#include <numbers>

#include "liepush/errors.hpp"

namespace liepush {

namespace {

constexpr double kPi = std::numbers::pi;

linalg::Matrix so3_generator(int i) {
    linalg::Matrix l = linalg::Matrix::Zero(3, 3);
    switch (i) {
    case 0: l(2, 1) = 1.0; l(1, 2) = -1.0; break;
    case 1: l(0, 2) = 1.0; l(2, 0) = -1.0; break;
    default: l(1, 0) = 1.0; l(0, 1) = -1.0; break;
    }
    return l;
}

void require_group(const GroupDescriptor& G, const GroupTag& tag, const char* what) {
    if (!(G.tag() == tag)) {
        throw GroupMismatch(std::string(what) + ": expected " + G.tag().str() + ", got " + tag.str());
    }
}

Eigen::Vector3d rotation_vee(const linalg::Matrix& r) {
    return {r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1)};
}

// Principal log of a rotation with angle below pi - kAntipodalBand.
Eigen::Vector3d so3_log(const linalg::Matrix& r) {
    const double theta = rotation_angle(r);
    if (theta >= kPi - kAntipodalBand) {
        throw BoundaryError("log_principal: rotation angle within 1e-6 of pi; axis is ambiguous");
    }
    const Eigen::Vector3d w = rotation_vee(r);
    double scale;
    if (theta < kernels::kSmallAngle) {
        scale = 0.5 + theta * theta / 12.0 + 7.0 * std::pow(theta, 4) / 720.0;
    } else {
        scale = theta / (2.0 * std::sin(theta));
    }
    return scale * w;
}

linalg::Matrix to_matrix(const TMatrix<double>& m) {
    linalg::Matrix out(m.rows, m.cols);
    for (int i = 0; i < m.rows; ++i)
        for (int j = 0; j < m.cols; ++j) out(i, j) = m(i, j);
    return out;
}

linalg::Matrix so3_v_matrix(const Eigen::Vector3d& w) {
    const auto v = kernels::so3_v(w.data());
    linalg::Matrix out(3, 3);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) out(i, j) = v[static_cast<std::size_t>(3 * i + j)];
    return out;
}

double principal_angle(double a) {
    double wrapped = std::remainder(a, 2.0 * kPi);
    if (wrapped <= -kPi) wrapped += 2.0 * kPi;
    return wrapped;
}

} // namespace

std::string GroupTag::str() const {
    switch (kind) {
    case GroupKind::torus: return "t" + std::to_string(torus_dim);
    case GroupKind::so3: return "so3";
    case GroupKind::se3: return "se3";
    }
    return {};
}

GroupTag GroupTag::parse(std::string_view text) {
    if (text == "so3") return {GroupKind::so3, 0};
    if (text == "se3") return {GroupKind::se3, 0};
    if (text.size() >= 2 && text[0] == 't') {
        int n = 0;
        for (char c : text.substr(1)) {
            if (c < '0' || c > '9') throw InvalidArgument("unknown group tag '" + std::string(text) + "'");
            n = n * 10 + (c - '0');
            if (n > 64) throw InvalidArgument("torus dimension too large in '" + std::string(text) + "'");
        }
        if (n >= 1) return {GroupKind::torus, n};
    }
    throw InvalidArgument("unknown group tag '" + std::string(text) + "'");
}

GroupDescriptor GroupDescriptor::torus(int n) {
    if (n < 1) throw InvalidArgument("torus dimension must be >= 1");
    GroupDescriptor G;
    G.tag_ = {GroupKind::torus, n};
    G.algebra_dim_ = n;
    G.matrix_size_ = 2 * n;
    for (int i = 0; i < n; ++i) {
        linalg::Matrix b = linalg::Matrix::Zero(2 * n, 2 * n);
        b(2 * i, 2 * i + 1) = -1.0;
        b(2 * i + 1, 2 * i) = 1.0;
        G.basis_.push_back(b);
    }
    G.injectivity_note_ = "injective on the cube (-pi, pi]^n; preimages differ by 2 pi k per coordinate";
    return G;
}

GroupDescriptor GroupDescriptor::so3() {
    GroupDescriptor G;
    G.tag_ = {GroupKind::so3, 0};
    G.algebra_dim_ = 3;
    G.matrix_size_ = 3;
    for (int i = 0; i < 3; ++i) G.basis_.push_back(so3_generator(i));
    G.injectivity_note_ = "injective on the open ball of radius pi; preimages (theta + 2 pi k) u";
    return G;
}

GroupDescriptor GroupDescriptor::se3() {
    GroupDescriptor G;
    G.tag_ = {GroupKind::se3, 0};
    G.algebra_dim_ = 6;
    G.matrix_size_ = 4;
    for (int i = 0; i < 3; ++i) {
        linalg::Matrix b = linalg::Matrix::Zero(4, 4);
        b.topLeftCorner(3, 3) = so3_generator(i);
        G.basis_.push_back(b);
    }
    for (int i = 0; i < 3; ++i) {
        linalg::Matrix b = linalg::Matrix::Zero(4, 4);
        b(i, 3) = 1.0;
        G.basis_.push_back(b);
    }
    G.injectivity_note_ = "injective for rotation norm below pi; rotation branches as SO(3), translation V(omega_k)^-1 t";
    return G;
}

GroupDescriptor GroupDescriptor::from_tag(const GroupTag& tag) {
    switch (tag.kind) {
    case GroupKind::torus: return torus(tag.torus_dim);
    case GroupKind::so3: return so3();
    case GroupKind::se3: return se3();
    }
    throw InvalidArgument("unknown group kind");
}

linalg::Matrix GroupDescriptor::hat(const linalg::Vector& coords) const {
    if (coords.size() != algebra_dim_) throw InvalidArgument("hat: wrong coordinate count for " + tag_.str());
    linalg::Matrix m = linalg::Matrix::Zero(matrix_size_, matrix_size_);
    for (int i = 0; i < algebra_dim_; ++i) m += coords[i] * basis_[static_cast<std::size_t>(i)];
    return m;
}

AlgebraVector GroupDescriptor::vector(linalg::Vector coords) const {
    if (coords.size() != algebra_dim_) {
        throw InvalidArgument("algebra vector for " + tag_.str() + " needs " + std::to_string(algebra_dim_) +
                              " coordinates, got " + std::to_string(coords.size()));
    }
    if (!coords.allFinite()) throw InvalidArgument("algebra vector has non-finite coordinates");
    return {tag_, std::move(coords)};
}

GroupElement GroupDescriptor::element(linalg::Matrix m) const {
    GroupElement g{tag_, std::move(m)};
    validate_element(*this, g);
    return g;
}

GroupElement GroupDescriptor::identity() const {
    return {tag_, linalg::Matrix::Identity(matrix_size_, matrix_size_)};
}

void validate_element(const GroupDescriptor& G, const GroupElement& g) {
    require_group(G, g.group, "validate_element");
    const auto& m = g.matrix;
    const int n = G.matrix_size();
    if (m.rows() != n || m.cols() != n) throw InvalidElement("element has wrong matrix size for " + G.tag().str());
    if (!m.allFinite()) throw InvalidElement("element has non-finite entries");
    constexpr double kTol = 1e-9;
    auto check_rotation = [&](const linalg::Matrix& r) {
        const auto k = r.rows();
        if ((r.transpose() * r - linalg::Matrix::Identity(k, k)).cwiseAbs().maxCoeff() > kTol ||
            std::abs(r.determinant() - 1.0) > kTol) {
            throw InvalidElement("rotation block is not orthogonal with unit determinant");
        }
    };
    switch (G.kind()) {
    case GroupKind::torus: {
        linalg::Matrix blocks = linalg::Matrix::Zero(n, n);
        for (int i = 0; i < G.algebra_dim(); ++i) {
            const linalg::Matrix b = m.block(2 * i, 2 * i, 2, 2);
            check_rotation(b);
            blocks.block(2 * i, 2 * i, 2, 2) = b;
        }
        if ((m - blocks).cwiseAbs().maxCoeff() > kTol) throw InvalidElement("torus element is not block diagonal");
        break;
    }
    case GroupKind::so3: check_rotation(m); break;
    case GroupKind::se3:
        check_rotation(m.topLeftCorner(3, 3));
        if (m(3, 0) != 0.0 || m(3, 1) != 0.0 || m(3, 2) != 0.0 || m(3, 3) != 1.0) {
            throw InvalidElement("SE(3) bottom row must be (0, 0, 0, 1)");
        }
        break;
    }
}

GroupElement exp_map(const GroupDescriptor& G, const AlgebraVector& v) {
    require_group(G, v.group, "exp_map");
    if (v.coords.size() != G.algebra_dim()) throw InvalidArgument("exp_map: wrong coordinate count");
    const std::span<const double> c(v.coords.data(), static_cast<std::size_t>(v.coords.size()));
    return {G.tag(), to_matrix(exp_map_t<double>(G, c))};
}

AlgebraVector log_principal(const GroupDescriptor& G, const GroupElement& g) {
    validate_element(G, g);
    linalg::Vector out(G.algebra_dim());
    switch (G.kind()) {
    case GroupKind::torus:
        for (int i = 0; i < G.algebra_dim(); ++i) {
            out[i] = principal_angle(std::atan2(g.matrix(2 * i + 1, 2 * i), g.matrix(2 * i, 2 * i)));
        }
        break;
    case GroupKind::so3: out = so3_log(g.matrix); break;
    case GroupKind::se3: {
        const Eigen::Vector3d w = so3_log(g.matrix.topLeftCorner(3, 3));
        const linalg::Vector t = g.matrix.topRightCorner(3, 1);
        out.head(3) = w;
        out.tail(3) = linalg::solve(so3_v_matrix(w), t);
        break;
    }
    }
    return {G.tag(), out};
}

std::vector<AlgebraVector> preimage(const GroupDescriptor& G, const GroupElement& g, int K) {
    if (K < 0) throw InvalidArgument("preimage: K must be >= 0");
    validate_element(G, g);
    std::vector<AlgebraVector> out;
    if (G.kind() == GroupKind::torus) {
        const int n = G.algebra_dim();
        const linalg::Vector base = log_principal(G, g).coords;
        const int width = 2 * K + 1;
        std::size_t total = 1;
        for (int i = 0; i < n; ++i) total *= static_cast<std::size_t>(width);
        out.reserve(total);
        std::vector<int> k(static_cast<std::size_t>(n), -K);
        for (std::size_t idx = 0; idx < total; ++idx) {
            linalg::Vector x = base;
            for (int i = 0; i < n; ++i) x[i] += 2.0 * kPi * k[static_cast<std::size_t>(i)];
            out.push_back({G.tag(), x});
            for (int i = n - 1; i >= 0; --i) {
                if (++k[static_cast<std::size_t>(i)] <= K) break;
                k[static_cast<std::size_t>(i)] = -K;
            }
        }
        return out;
    }

    const linalg::Matrix r = g.matrix.topLeftCorner(3, 3);
    const double theta = rotation_angle(r);
    if (theta < kIdentityBand) {
        throw SingularElement("preimage: identity rotation is a singular point of exp (branches are spheres)");
    }
    if (theta >= kPi - kAntipodalBand) {
        throw SingularElement("preimage: rotation angle within 1e-6 of pi; branch count changes there");
    }
    const Eigen::Vector3d w = so3_log(r);
    const Eigen::Vector3d axis = w / theta;
    out.reserve(static_cast<std::size_t>(2 * K + 1));
    for (int k = -K; k <= K; ++k) {
        const Eigen::Vector3d wk = (theta + 2.0 * kPi * k) * axis;
        linalg::Vector x(G.algebra_dim());
        x.head(3) = wk;
        if (G.kind() == GroupKind::se3) {
            const linalg::Vector t = g.matrix.topRightCorner(3, 1);
            x.tail(3) = linalg::solve(so3_v_matrix(wk), t);
        }
        out.push_back({G.tag(), x});
    }
    return out;
}

linalg::Matrix skew(const Eigen::Vector3d& w) {
    linalg::Matrix m(3, 3);
    m << 0.0, -w[2], w[1], w[2], 0.0, -w[0], -w[1], w[0], 0.0;
    return m;
}

linalg::Matrix ad_matrix(const GroupDescriptor& G, const AlgebraVector& v) {
    require_group(G, v.group, "ad");
    const int n = G.algebra_dim();
    switch (G.kind()) {
    case GroupKind::torus: return linalg::Matrix::Zero(n, n);
    case GroupKind::so3: return skew(v.coords.head<3>());
    case GroupKind::se3: {
        linalg::Matrix m = linalg::Matrix::Zero(6, 6);
        const linalg::Matrix w = skew(v.coords.head<3>());
        m.topLeftCorner(3, 3) = w;
        m.bottomRightCorner(3, 3) = w;
        m.bottomLeftCorner(3, 3) = skew(v.coords.tail<3>());
        return m;
    }
    }
    return {};
}

GroupElement compose(const GroupElement& g, const GroupElement& h) {
    if (!(g.group == h.group)) throw GroupMismatch("compose: " + g.group.str() + " vs " + h.group.str());
    return {g.group, g.matrix * h.matrix};
}

GroupElement inverse(const GroupElement& g) {
    switch (g.group.kind) {
    case GroupKind::torus:
    case GroupKind::so3: return {g.group, g.matrix.transpose()};
    case GroupKind::se3: {
        linalg::Matrix out = linalg::Matrix::Identity(4, 4);
        const linalg::Matrix rt = g.matrix.topLeftCorner(3, 3).transpose();
        out.topLeftCorner(3, 3) = rt;
        out.topRightCorner(3, 1) = -rt * g.matrix.topRightCorner(3, 1);
        return {g.group, out};
    }
    }
    return g;
}

double killing_form(const GroupDescriptor& G, const AlgebraVector& x, const AlgebraVector& y) {
    return -(ad_matrix(G, x) * ad_matrix(G, y)).trace();
}

double rotation_angle(const linalg::Matrix& r) {
    const double c = 0.5 * (r.trace() - 1.0);
    const double s = 0.5 * rotation_vee(r).norm();
    return std::atan2(s, c);
}

double rotation_norm(const GroupDescriptor& G, const linalg::Vector& coords) {
    if (G.kind() == GroupKind::torus) return coords.norm();
    return coords.head<3>().norm();
}

double rotation_distance(const linalg::Matrix& r1, const linalg::Matrix& r2) {
    return rotation_angle(r1.transpose() * r2);
}

} // namespace liepush
