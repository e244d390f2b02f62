#pragma once

#include <vector>

#include "locdet/raster.hpp"
#include "locdet/rng.hpp"

namespace locdet {

// Neighborhood operators used as grammar terminals. All are pure functions of
// their inputs; convolutions use reflect-101 borders, morphology and the
// percentile filter clip the footprint at image borders. Outputs are always
// finite: each operator clamps to +-1e150 as an overflow guard.

constexpr double kValueClamp = 1e150;

enum class BinaryOpKind { Mult, Blend, NormDiff, ScaledSub };

// mult f(a,b)=ab; blend f(a,b)=(a+b)/2; normDiff f(a,b)=(a-b)/(sum(A)+sum(B));
// scaledSub f(a,b)=(a-b)/(a+b), defined as 0 where a+b=0. normDiff with a zero
// denominator yields the all-zero image.
GreyImage apply_binary(BinaryOpKind kind, const GreyImage& a, const GreyImage& b);

// f(u) = arctan(lambda*(u+theta))/lambda; the lambda=0 analytic limit is u+theta.
GreyImage apply_sigmoid(const GreyImage& img, double theta, double lambda);

enum class LawsVector { L5, E5, S5, R5, W5 };
const std::vector<double>& laws_vector(LawsVector v);

// Correlation with the 5x5 outer product u * v^T (u vertical, v horizontal).
GreyImage apply_laws(const GreyImage& img, LawsVector u, LawsVector v);

// Sum of Gaussian second derivatives at scale sigma.
GreyImage apply_laplace(const GreyImage& img, double sigma);

// Magnitude of the Gaussian first-derivative gradient at scale sigma.
GreyImage apply_ggm(const GreyImage& img, double sigma);

enum class GaborEnvelope { Sin, Cos, Both };

// Oriented sinusoid of wavelength `wavelength` (pixels) under a Gaussian
// envelope; kernel extent is `size` rounded to odd, envelope std = size/4
// along the orientation and size*ratio/4 across it. `Both` responds with the
// magnitude of the sin and cos responses.
GreyImage apply_gabor(const GreyImage& img, double orientation, double size,
                      double ratio, double wavelength, GaborEnvelope envelope);

enum class MorphKind { Erode, Dilate, Open, Close };

// Flat-SE greyscale morphology: erode = footprint min, dilate = max,
// open = dilate(erode), close = erode(dilate).
GreyImage apply_morph(MorphKind kind, const GreyImage& img, const StructuringElement& se);

// Nearest-rank p'th percentile of the values under the footprint; p in [0,100].
// p=0 equals erosion and p=100 equals dilation exactly.
GreyImage apply_ptile(const GreyImage& img, double p, const StructuringElement& se);

// Haar-style rectangle kernel: adjacent equal-size rectangles of +-1
// embedded in a zero-filled extent, evaluated through an integral image.
struct ViolaJonesKernel {
  enum class Kind { Horizontal2, Vertical2, Horizontal3, Vertical3, Quad };
  static constexpr int kExtent = 31;  // odd; kernel center at (kExtent/2, kExtent/2)

  Kind kind = Kind::Horizontal2;
  int rect_w = 1, rect_h = 1;     // size of each constituent rectangle
  int offset_x = 0, offset_y = 0; // placement of the rectangle block in the extent

  int block_w() const;
  int block_h() const;

  struct Rect {
    int x0, y0, x1, y1;  // half-open, kernel coordinates
    double coeff;
  };
  std::vector<Rect> rects() const;

  bool operator==(const ViolaJonesKernel&) const = default;
};

// Kind uniform over the 5 kinds, then rectangle size uniform over feasible
// sizes, then block offset uniform over feasible positions in the extent.
ViolaJonesKernel sample_vj_kernel(Rng& rng);

GreyImage apply_convolve(const GreyImage& img, const ViolaJonesKernel& kernel);

// Reflect-101 index fold (mirror without repeating the edge sample).
int reflect101(int i, int n);

// Separable correlation with reflect-101 borders; kx runs along x, ky along y.
GreyImage separable_conv(const GreyImage& img, const std::vector<double>& kx,
                         const std::vector<double>& ky);

// Normalized Gaussian and raw sampled derivative taps (radius ceil(3*sigma)).
std::vector<double> gaussian_taps(double sigma);
std::vector<double> gaussian_d1_taps(double sigma);
std::vector<double> gaussian_d2_taps(double sigma);

}  // namespace locdet
