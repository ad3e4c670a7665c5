#pragma once

// Planar C x H x W kernels shared by the raster type and the autodiff ops.
// Every forward kernel has an adjoint that scatters output gradients back.

namespace umrl::detail {

// 2x2 block mean. Requires even H and W; output is (H/2) x (W/2).
void area_half(const double* src, int c, int h, int w, double* dst);
void area_half_adjoint(const double* grad_out, int c, int h, int w, double* grad_in);

// Bilinear 2x upsampling with half-pixel centers and edge clamping.
// Input is h x w, output is 2h x 2w.
void bilinear_double(const double* src, int c, int h, int w, double* dst);
void bilinear_double_adjoint(const double* grad_out, int c, int h, int w, double* grad_in);

// Pixel replication 2x. Input h x w.
void nearest_double(const double* src, int c, int h, int w, double* dst);
void nearest_double_adjoint(const double* grad_out, int c, int h, int w, double* grad_in);

} // namespace umrl::detail
