#pragma once

// The supported matrix Lie groups: the n-torus T^n, SO(3) and SE(3).
//
// Algebra coordinates are taken in a fixed basis:
//   T^n   n angles; basis block-diagonal copies of L = [[0,-1],[1,0]].
//   SO(3) v = theta u; basis L1, L2, L3 (so that hat(v) = v_x).
//   SE(3) (omega, u); basis L_i padded to 4x4 then the translation generators.

#include <string>
#include <string_view>
#include <vector>

#include "liepush/kernels.hpp"
#include "liepush/linalg.hpp"

namespace liepush {

enum class GroupKind { torus, so3, se3 };

/// Serialized as "t{n}", "so3" or "se3".
struct GroupTag {
    GroupKind kind = GroupKind::so3;
    int torus_dim = 0;

    std::string str() const;
    static GroupTag parse(std::string_view text);

    friend bool operator==(const GroupTag&, const GroupTag&) = default;
};

struct AlgebraVector {
    GroupTag group;
    linalg::Vector coords;
};

struct GroupElement {
    GroupTag group;
    linalg::Matrix matrix;
};

class GroupDescriptor {
public:
    static GroupDescriptor torus(int n);
    static GroupDescriptor so3();
    static GroupDescriptor se3();
    static GroupDescriptor from_tag(const GroupTag& tag);
    static GroupDescriptor from_string(std::string_view tag) { return from_tag(GroupTag::parse(tag)); }

    const GroupTag& tag() const { return tag_; }
    GroupKind kind() const { return tag_.kind; }
    int algebra_dim() const { return algebra_dim_; }
    int matrix_size() const { return matrix_size_; }
    const std::vector<linalg::Matrix>& basis() const { return basis_; }
    const std::string& injectivity_note() const { return injectivity_note_; }

    /// sum_i v_i B_i.
    linalg::Matrix hat(const linalg::Vector& coords) const;

    AlgebraVector vector(linalg::Vector coords) const;
    GroupElement element(linalg::Matrix m) const;
    GroupElement identity() const;

private:
    GroupTag tag_;
    int algebra_dim_ = 0;
    int matrix_size_ = 0;
    std::vector<linalg::Matrix> basis_;
    std::string injectivity_note_;
};

/// Rotation angles closer than this to pi have no unique principal log.
inline constexpr double kAntipodalBand = 1e-6;
/// Rotation angles below this are treated as the identity when enumerating
/// preimages; the branch axis is undefined there.
inline constexpr double kIdentityBand = 1e-8;

/// Throws InvalidElement when `g` violates the group invariants (1e-9).
void validate_element(const GroupDescriptor& G, const GroupElement& g);

/// Closed-form exponential map.
GroupElement exp_map(const GroupDescriptor& G, const AlgebraVector& v);

/// Closed-form exponential on any scalar type (double or ad::Var).
template <class T>
TMatrix<T> exp_map_t(const GroupDescriptor& G, std::span<const T> v);

/// Principal logarithm. Throws BoundaryError when the rotation angle is
/// within 1e-6 of pi.
AlgebraVector log_principal(const GroupDescriptor& G, const GroupElement& g);

/// All preimages exp^{-1}(g) with branch index |k| <= K (per coordinate for
/// the torus). Throws SingularElement at the identity rotation and near pi.
std::vector<AlgebraVector> preimage(const GroupDescriptor& G, const GroupElement& g, int K);

/// Matrix of y -> [x, y] in the algebra basis.
linalg::Matrix ad_matrix(const GroupDescriptor& G, const AlgebraVector& v);

GroupElement compose(const GroupElement& g, const GroupElement& h);
GroupElement inverse(const GroupElement& g);

/// Negative Killing form -trace(ad_x ad_y).
double killing_form(const GroupDescriptor& G, const AlgebraVector& x, const AlgebraVector& y);

/// Rotation angle in [0, pi] of a 3x3 rotation, computed with atan2.
double rotation_angle(const linalg::Matrix& r);

/// Norm of the rotation part of an algebra vector (SO(3), SE(3)); the
/// Euclidean norm for the torus.
double rotation_norm(const GroupDescriptor& G, const linalg::Vector& coords);

/// Geodesic distance theta(R1^T R2) between rotations.
double rotation_distance(const linalg::Matrix& r1, const linalg::Matrix& r2);

linalg::Matrix skew(const Eigen::Vector3d& w);

// --- template definitions ---

template <class T>
TMatrix<T> exp_map_t(const GroupDescriptor& G, std::span<const T> v) {
    using std::cos;
    using std::sin;
    const int m = G.matrix_size();
    TMatrix<T> out(m, m);
    switch (G.kind()) {
    case GroupKind::torus:
        for (int i = 0; i < G.algebra_dim(); ++i) {
            const T c = cos(v[static_cast<std::size_t>(i)]);
            const T s = sin(v[static_cast<std::size_t>(i)]);
            out(2 * i, 2 * i) = c;
            out(2 * i, 2 * i + 1) = -s;
            out(2 * i + 1, 2 * i) = s;
            out(2 * i + 1, 2 * i + 1) = c;
        }
        break;
    case GroupKind::so3: {
        const auto r = kernels::so3_exp(v.data());
        out.a.assign(r.begin(), r.end());
        break;
    }
    case GroupKind::se3: {
        const T* w = v.data();
        const T* u = v.data() + 3;
        const auto c = kernels::so3_coeffs(kernels::squared_norm3(w));
        const auto r = kernels::so3_poly(w, c.a, c.b);
        const auto vm = kernels::so3_poly(w, c.b, c.c);
        for (int i = 0; i < 3; ++i) {
            T t(0.0);
            for (int j = 0; j < 3; ++j) {
                out(i, j) = r[static_cast<std::size_t>(3 * i + j)];
                t = t + vm[static_cast<std::size_t>(3 * i + j)] * u[j];
            }
            out(i, 3) = t;
        }
        out(3, 3) = T(1.0);
        break;
    }
    }
    return out;
}

} // namespace liepush
