#include "vattn/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>
#include <stdexcept>

namespace vattn {

namespace {

void check_chw(const Tensor& t, const char* what) {
    if (t.rank() != 3) {
        throw std::invalid_argument(std::string(what) + ": expected [C,H,W]");
    }
}

} // namespace

namespace {

// zero-padded (h+2) x (wd+2) staging of every plane; removes the boundary
// guards from the tap loops so they vectorize cleanly. The buffer is
// thread-local and its zero border survives across calls with the same
// geometry, so only the interior rows are rewritten.
const double* pad_planes(const double* src, std::size_t planes, std::size_t h,
                         std::size_t wd) {
    thread_local std::vector<double> buf;
    thread_local std::size_t zh = 0, zw = 0, zplanes = 0;
    const std::size_t pw = wd + 2;
    const std::size_t ph = h + 2;
    if (zh != h || zw != wd || planes > zplanes) {
        buf.assign(planes * ph * pw, 0.0);
        zh = h;
        zw = wd;
        zplanes = planes;
    }
    for (std::size_t p = 0; p < planes; ++p) {
        const double* s = src + p * h * wd;
        double* d = buf.data() + p * ph * pw;
        for (std::size_t y = 0; y < h; ++y) {
            std::copy(s + y * wd, s + (y + 1) * wd, d + (y + 1) * pw + 1);
        }
    }
    return buf.data();
}

} // namespace

void conv3x3_forward(const Tensor& in, const Tensor& w, const Tensor& b, Tensor& out) {
    check_chw(in, "conv3x3_forward");
    const std::size_t cin = in.dim(0), h = in.dim(1), wd = in.dim(2);
    const std::size_t cout = w.dim(0);
    if (w.rank() != 4 || w.dim(1) != cin || w.dim(2) != 3 || w.dim(3) != 3) {
        throw std::invalid_argument("conv3x3_forward: weight shape mismatch");
    }
    if (!out.same_shape(Tensor({cout, h, wd}))) {
        out = Tensor({cout, h, wd});
    }
    const std::size_t hw = h * wd, pw = wd + 2;
    const double* padded = pad_planes(in.data(), cin, h, wd);
    for (std::size_t oc = 0; oc < cout; ++oc) {
        double* op = out.data() + oc * hw;
        for (std::size_t i = 0; i < hw; ++i) {
            op[i] = b[oc];
        }
        for (std::size_t ic = 0; ic < cin; ++ic) {
            const double* plane = padded + ic * (h + 2) * pw;
            const double* wp = w.data() + (oc * cin + ic) * 9;
            const double w00 = wp[0], w01 = wp[1], w02 = wp[2];
            const double w10 = wp[3], w11 = wp[4], w12 = wp[5];
            const double w20 = wp[6], w21 = wp[7], w22 = wp[8];
            for (std::size_t y = 0; y < h; ++y) {
                double* orow = op + y * wd;
                const double* r0 = plane + y * pw;
                const double* r1 = r0 + pw;
                const double* r2 = r1 + pw;
#pragma omp simd
                for (std::size_t x = 0; x < wd; ++x) {
                    orow[x] += w00 * r0[x] + w01 * r0[x + 1] + w02 * r0[x + 2] +
                               w10 * r1[x] + w11 * r1[x + 1] + w12 * r1[x + 2] +
                               w20 * r2[x] + w21 * r2[x + 1] + w22 * r2[x + 2];
                }
            }
        }
    }
}

void conv3x3_backward_input(const Tensor& d_out, const Tensor& w, Tensor& d_in) {
    const std::size_t cout = d_out.dim(0), h = d_out.dim(1), wd = d_out.dim(2);
    const std::size_t cin = w.dim(1);
    const std::size_t hw = h * wd, pw = wd + 2;
    if (!d_in.same_shape(Tensor({cin, h, wd}))) {
        throw std::invalid_argument("conv3x3_backward_input: d_in shape mismatch");
    }
    // transpose conv: d_in[ic, y, x] += sum_oc sum_taps w * d_out[oc, y-dy, x-dx]
    const double* padded = pad_planes(d_out.data(), cout, h, wd);
    for (std::size_t oc = 0; oc < cout; ++oc) {
        const double* plane = padded + oc * (h + 2) * pw;
        for (std::size_t ic = 0; ic < cin; ++ic) {
            double* gp = d_in.data() + ic * hw;
            const double* wp = w.data() + (oc * cin + ic) * 9;
            const double w00 = wp[0], w01 = wp[1], w02 = wp[2];
            const double w10 = wp[3], w11 = wp[4], w12 = wp[5];
            const double w20 = wp[6], w21 = wp[7], w22 = wp[8];
            for (std::size_t y = 0; y < h; ++y) {
                double* grow = gp + y * wd;
                // d_out[y+1], [y], [y-1] in padded coordinates
                const double* r0 = plane + (y + 2) * pw;
                const double* r1 = plane + (y + 1) * pw;
                const double* r2 = plane + y * pw;
#pragma omp simd
                for (std::size_t x = 0; x < wd; ++x) {
                    grow[x] += w00 * r0[x + 2] + w01 * r0[x + 1] + w02 * r0[x] +
                               w10 * r1[x + 2] + w11 * r1[x + 1] + w12 * r1[x] +
                               w20 * r2[x + 2] + w21 * r2[x + 1] + w22 * r2[x];
                }
            }
        }
    }
}

void conv3x3_backward_params(const Tensor& d_out, const Tensor& in, Tensor& dw, Tensor& db) {
    const std::size_t cout = d_out.dim(0), h = d_out.dim(1), wd = d_out.dim(2);
    const std::size_t cin = in.dim(0);
    const std::size_t hw = h * wd, pw = wd + 2;
    const double* padded = pad_planes(in.data(), cin, h, wd);
    for (std::size_t oc = 0; oc < cout; ++oc) {
        const double* dp = d_out.data() + oc * hw;
        double acc_b = 0.0;
#pragma omp simd reduction(+ : acc_b)
        for (std::size_t i = 0; i < hw; ++i) {
            acc_b += dp[i];
        }
        db[oc] += acc_b;
        for (std::size_t ic = 0; ic < cin; ++ic) {
            const double* plane = padded + ic * (h + 2) * pw;
            double a00 = 0, a01 = 0, a02 = 0, a10 = 0, a11 = 0, a12 = 0, a20 = 0, a21 = 0,
                   a22 = 0;
            for (std::size_t y = 0; y < h; ++y) {
                const double* drow = dp + y * wd;
                const double* r0 = plane + y * pw;
                const double* r1 = r0 + pw;
                const double* r2 = r1 + pw;
#pragma omp simd reduction(+ : a00, a01, a02, a10, a11, a12, a20, a21, a22)
                for (std::size_t x = 0; x < wd; ++x) {
                    const double dv = drow[x];
                    a00 += dv * r0[x];
                    a01 += dv * r0[x + 1];
                    a02 += dv * r0[x + 2];
                    a10 += dv * r1[x];
                    a11 += dv * r1[x + 1];
                    a12 += dv * r1[x + 2];
                    a20 += dv * r2[x];
                    a21 += dv * r2[x + 1];
                    a22 += dv * r2[x + 2];
                }
            }
            double* wp = dw.data() + (oc * cin + ic) * 9;
            wp[0] += a00;
            wp[1] += a01;
            wp[2] += a02;
            wp[3] += a10;
            wp[4] += a11;
            wp[5] += a12;
            wp[6] += a20;
            wp[7] += a21;
            wp[8] += a22;
        }
    }
}

void conv1x1_forward(const Tensor& in, const Tensor& w, const Tensor& b, Tensor& out) {
    const std::size_t cin = in.dim(0), h = in.dim(1), wd = in.dim(2);
    const std::size_t cout = w.dim(0);
    if (!out.same_shape(Tensor({cout, h, wd}))) {
        out = Tensor({cout, h, wd});
    }
    const std::size_t hw = h * wd;
    for (std::size_t oc = 0; oc < cout; ++oc) {
        double* op = out.data() + oc * hw;
        for (std::size_t i = 0; i < hw; ++i) {
            op[i] = b[oc];
        }
        const double* wr = w.data() + oc * cin;
        for (std::size_t ic = 0; ic < cin; ++ic) {
            const double wv = wr[ic];
            const double* ip = in.data() + ic * hw;
            for (std::size_t i = 0; i < hw; ++i) {
                op[i] += wv * ip[i];
            }
        }
    }
}

void conv1x1_backward_input(const Tensor& d_out, const Tensor& w, Tensor& d_in) {
    const std::size_t cout = d_out.dim(0);
    const std::size_t cin = d_in.dim(0);
    const std::size_t hw = d_out.dim(1) * d_out.dim(2);
    for (std::size_t ic = 0; ic < cin; ++ic) {
        double* gp = d_in.data() + ic * hw;
        for (std::size_t oc = 0; oc < cout; ++oc) {
            const double wv = w[oc * cin + ic];
            const double* dp = d_out.data() + oc * hw;
            for (std::size_t i = 0; i < hw; ++i) {
                gp[i] += wv * dp[i];
            }
        }
    }
}

void conv1x1_backward_params(const Tensor& d_out, const Tensor& in, Tensor& dw, Tensor& db) {
    const std::size_t cout = d_out.dim(0);
    const std::size_t cin = in.dim(0);
    const std::size_t hw = d_out.dim(1) * d_out.dim(2);
    for (std::size_t oc = 0; oc < cout; ++oc) {
        const double* dp = d_out.data() + oc * hw;
        double acc_b = 0.0;
#pragma omp simd reduction(+ : acc_b)
        for (std::size_t i = 0; i < hw; ++i) {
            acc_b += dp[i];
        }
        db[oc] += acc_b;
        for (std::size_t ic = 0; ic < cin; ++ic) {
            const double* ip = in.data() + ic * hw;
            double acc = 0.0;
#pragma omp simd reduction(+ : acc)
            for (std::size_t i = 0; i < hw; ++i) {
                acc += dp[i] * ip[i];
            }
            dw[oc * cin + ic] += acc;
        }
    }
}

void isru_forward(const Tensor& in, Tensor& out) {
    if (!out.same_shape(in)) {
        out = Tensor(in.shape());
    }
    for (std::size_t i = 0; i < in.size(); ++i) {
        out[i] = isru(in[i]);
    }
}

void isru_backward(const Tensor& act, const Tensor& d_act, Tensor& d_pre) {
    if (!d_pre.same_shape(act)) {
        d_pre = Tensor(act.shape());
    }
    for (std::size_t i = 0; i < act.size(); ++i) {
        d_pre[i] = d_act[i] * isru_grad_from_act(act[i]);
    }
}

void softplus_forward(const Tensor& in, Tensor& out) {
    if (!out.same_shape(in)) {
        out = Tensor(in.shape());
    }
    for (std::size_t i = 0; i < in.size(); ++i) {
        out[i] = softplus_stable(in[i]);
    }
}

void softplus_backward(const Tensor& pre, const Tensor& d_act, Tensor& d_pre) {
    if (!d_pre.same_shape(pre)) {
        d_pre = Tensor(pre.shape());
    }
    for (std::size_t i = 0; i < pre.size(); ++i) {
        d_pre[i] = d_act[i] * sigmoid_stable(pre[i]);
    }
}

} // namespace vattn
