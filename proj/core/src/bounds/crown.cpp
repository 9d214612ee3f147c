#include "opfcert/bounds/crown.hpp"

#include "opfcert/common/errors.hpp"

namespace opfcert::bounds {

namespace ad = nn::ad;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Linear relaxation of one hidden ReLU layer: lower_slope * z <= relu(z) <= upper_slope * z + upper_icpt.
struct Relaxation {
    ad::Var upper_slope;
    ad::Var upper_icpt;
    ad::Var lower_slope;
};

Relaxation relax(ad::Tape& t, const ad::Var& l, const ad::Var& u) {
    const auto& lv = l.value();
    const auto& uv = u.value();
    const Index n = lv.rows();
    MatrixXd unstable(n, 1), active(n, 1), lower(n, 1);
    for (Index i = 0; i < n; ++i) {
        const bool on = lv(i) >= 0.0;
        const bool off = uv(i) <= 0.0;
        unstable(i) = !on && !off ? 1.0 : 0.0;
        active(i) = on ? 1.0 : 0.0;
        lower(i) = on || (!off && uv(i) > -lv(i)) ? 1.0 : 0.0;
    }
    const ad::Var denom = ad::where(unstable, ad::sub(u, l), t.constant(MatrixXd::Ones(n, 1)));
    const ad::Var ratio = ad::div(u, denom);
    Relaxation r;
    r.upper_slope = ad::where(unstable, ratio, t.constant(active));
    r.upper_icpt = ad::where(unstable, ad::neg(ad::mul(ratio, l)), t.constant(MatrixXd::Zero(n, 1)));
    r.lower_slope = t.constant(lower);
    return r;
}

ad::Var positive(const ad::Var& a) { return ad::relu(a); }

// Bounds on lambda * z_J + c0 (z_J the pre-activation of layer J) by substituting the layers
// back to the physical input.
AffineVars back_substitute(ad::Tape& t, const nn::MlpVars& vars, const nn::MlpModel& model, const Box& box,
                           const std::vector<Relaxation>& relaxations, std::size_t layer, const ad::Var& lambda,
                           const ad::Var& c0) {
    ad::Var au = lambda, al = lambda, bu = c0, bl = c0;
    for (std::size_t j = layer + 1; j-- > 0;) {
        bu = ad::add(bu, ad::matmul(au, vars.biases[j]));
        bl = ad::add(bl, ad::matmul(al, vars.biases[j]));
        au = ad::matmul(au, vars.weights[j]);
        al = ad::matmul(al, vars.weights[j]);
        if (j == 0) break;
        const Relaxation& r = relaxations[j - 1];
        const ad::Var up = positive(au), un = ad::sub(au, up);
        bu = ad::add(bu, ad::matmul(up, r.upper_icpt));
        au = ad::add(ad::scale_cols(up, r.upper_slope), ad::scale_cols(un, r.lower_slope));
        const ad::Var lp = positive(al), ln = ad::sub(al, lp);
        bl = ad::add(bl, ad::matmul(ln, r.upper_icpt));
        al = ad::add(ad::scale_cols(lp, r.lower_slope), ad::scale_cols(ln, r.upper_slope));
    }
    // Normalized input xn = x ./ s - m ./ s.
    const VectorXd inv_scale = model.input_norm.scale.cwiseInverse();
    const ad::Var d = t.constant(inv_scale);
    const ad::Var e = t.constant(-model.input_norm.shift.cwiseProduct(inv_scale));
    AffineVars out;
    out.upper_b = ad::add(bu, ad::matmul(au, e));
    out.lower_b = ad::add(bl, ad::matmul(al, e));
    out.upper_a = ad::scale_cols(au, d);
    out.lower_a = ad::scale_cols(al, d);
    const ad::Var c = t.constant(box.center());
    const ad::Var rad = t.constant(box.radius());
    out.hi = ad::add(ad::add(ad::matmul(out.upper_a, c), ad::matmul(ad::abs(out.upper_a), rad)), out.upper_b);
    out.lo = ad::add(ad::sub(ad::matmul(out.lower_a, c), ad::matmul(ad::abs(out.lower_a), rad)), out.lower_b);
    return out;
}

std::vector<Relaxation> relaxations_of(ad::Tape& t, const HiddenBounds& hidden) {
    std::vector<Relaxation> r;
    for (std::size_t j = 0; j < hidden.lower.size(); ++j) r.push_back(relax(t, hidden.lower[j], hidden.upper[j]));
    return r;
}

void check_box(const nn::MlpModel& model, const Box& box) {
    if (box.dim() != model.input_dim())
        throw ValidationError("box has " + std::to_string(box.dim()) + " coordinates, model expects " +
                              std::to_string(model.input_dim()));
}

}  // namespace

HiddenBounds hidden_bounds(ad::Tape& t, const nn::MlpVars& vars, const nn::MlpModel& model, const Box& box,
                           IntermediateMode mode) {
    check_box(model, box);
    HiddenBounds hb;
    const std::size_t hidden = vars.weights.size() - 1;
    if (mode == IntermediateMode::Crown) {
        std::vector<Relaxation> relaxations;
        for (std::size_t j = 0; j < hidden; ++j) {
            const Index h = vars.weights[j].rows();
            const AffineVars a = back_substitute(t, vars, model, box, relaxations, j,
                                                 t.constant(MatrixXd::Identity(h, h)), t.constant(MatrixXd::Zero(h, 1)));
            hb.lower.push_back(a.lo);
            hb.upper.push_back(a.hi);
            relaxations.push_back(relax(t, a.lo, a.hi));
        }
        return hb;
    }
    const VectorXd inv_scale = model.input_norm.scale.cwiseInverse();
    ad::Var c = t.constant((box.center() - model.input_norm.shift).cwiseProduct(inv_scale));
    ad::Var r = t.constant(box.radius().cwiseProduct(inv_scale));
    for (std::size_t j = 0; j < hidden; ++j) {
        const ad::Var zc = ad::add(ad::matmul(vars.weights[j], c), vars.biases[j]);
        const ad::Var zr = ad::matmul(ad::abs(vars.weights[j]), r);
        const ad::Var lo = ad::sub(zc, zr), hi = ad::add(zc, zr);
        hb.lower.push_back(lo);
        hb.upper.push_back(hi);
        const ad::Var plo = ad::relu(lo), phi = ad::relu(hi);
        c = ad::scale(ad::add(plo, phi), 0.5);
        r = ad::scale(ad::sub(phi, plo), 0.5);
    }
    return hb;
}

AffineVars crown(ad::Tape& t, const nn::MlpVars& vars, const nn::MlpModel& model, const Box& box,
                 const HiddenBounds& hidden, const MatrixXd& spec, const VectorXd& offset) {
    check_box(model, box);
    if (spec.cols() != model.output_dim()) throw ValidationError("spec width does not match the model output");
    const VectorXd c = offset.size() == 0 ? VectorXd::Zero(spec.rows()) : offset;
    if (c.size() != spec.rows()) throw ValidationError("spec offset length does not match the spec rows");
    // Physical output y = s .* z + m.
    const MatrixXd lambda = spec * model.output_norm.scale.asDiagonal();
    const VectorXd c0 = spec * model.output_norm.shift + c;
    return back_substitute(t, vars, model, box, relaxations_of(t, hidden), vars.weights.size() - 1,
                           t.constant(lambda), t.constant(c0));
}

AffineBounds crown_bounds(const nn::MlpModel& model, const Box& box, const MatrixXd& spec, const VectorXd& offset,
                          IntermediateMode mode) {
    ad::Tape t;
    const nn::MlpVars vars = nn::bind(model, t, false);
    const HiddenBounds hb = hidden_bounds(t, vars, model, box, mode);
    const AffineVars a = crown(t, vars, model, box, hb, spec, offset);
    return {a.lower_a.value(), a.upper_a.value(), a.lower_b.value(), a.upper_b.value(), a.lo.value(), a.hi.value()};
}

}  // namespace opfcert::bounds
