#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <optional>
#include <cstdio>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "specklenn/dataset.hpp"
#include "specklenn/parallel.hpp"
#include "specklenn/rng.hpp"

namespace specklenn {

/// Flat square detector. Pixel i sits at q = (i - (pixels-1)/2) * q_spacing,
/// so the q grid is symmetric about the beam axis.
struct DetectorGeometry {
  std::size_t pixels = 172;
  std::size_t beamstop_rows = 6;
  std::size_t beamstop_cols = 8;
  std::size_t gap_cols = 4;
  std::size_t crop = 96;
  double q_spacing = 1.0;

  std::size_t crop_offset() const { return (pixels - crop) / 2; }
  double q(std::size_t i) const { return (static_cast<double>(i) - (static_cast<double>(pixels) - 1) / 2) * q_spacing; }
  double q_max() const { return q(pixels - 1); }

  /// True where the full detector records data.
  bool valid(std::size_t row, std::size_t col) const {
    const std::size_t br = (pixels - beamstop_rows) / 2, bc = (pixels - beamstop_cols) / 2;
    const std::size_t gc = (pixels - gap_cols) / 2;
    if (row >= br && row < br + beamstop_rows && col >= bc && col < bc + beamstop_cols) return false;
    if (col >= gc && col < gc + gap_cols) return false;
    return true;
  }

  /// crop x crop validity mask of the centered window.
  std::vector<std::uint8_t> crop_mask() const {
    std::vector<std::uint8_t> m(crop * crop);
    const std::size_t o = crop_offset();
    for (std::size_t r = 0; r < crop; ++r)
      for (std::size_t c = 0; c < crop; ++c) m[r * crop + c] = valid(o + r, o + c);
    return m;
  }

  void validate() const {
    if (pixels == 0 || crop == 0 || crop > pixels) throw std::invalid_argument("detector: crop must fit on the detector");
    if ((pixels - crop) % 2) throw std::invalid_argument("detector: crop must center exactly (pixels - crop even)");
    if (beamstop_rows > pixels || beamstop_cols > pixels || gap_cols > pixels) {
      throw std::invalid_argument("detector: masks exceed detector bounds");
    }
    if (!(q_spacing > 0)) throw std::invalid_argument("detector: q_spacing must be positive");
  }
};

enum class Region { crop, detector };

struct SimulatorConfig {
  DetectorGeometry geometry{};
  /// Particle diameter (in units of 1/q_spacing) of a reference_atoms particle;
  /// 0.785 gives speckles about eight pixels wide.
  double reference_atoms = 5e4;
  double reference_diameter = 0.785;
  /// Expected photons per unit |F|^2 at fluence factor 1. The default puts
  /// about one photon per cropped pixel on a reference particle.
  double photon_scale = 1.6e-8;
  double gaussian_noise_std = 0.15;
  double fluence_sigma_log = 0.5;
  double poisson_gaussian_threshold = 1e4;
  double min_atoms = 1e4;
  double max_atoms = 1e5;
  std::size_t size_bins = 20;
  /// Real-space grid step relative to the Nyquist step of the detector's q range.
  double grid_oversampling = 2.0;
  /// Centre-to-centre distance of particles sharing a pulse, in diameters.
  double min_separation = 1.0;
  double max_separation = 2.5;
  /// Expected photons per pixel of an empty pulse at fluence factor 1.
  double background_photons = 0.02;
  /// Mean expected photons per pixel of a parasitic-scattering frame at fluence factor 1.
  double non_sample_photons = 1.0;

  double diameter(std::size_t n_atoms) const {
    return reference_diameter * std::cbrt(static_cast<double>(n_atoms) / reference_atoms);
  }
  double grid_step() const { return std::numbers::pi / (geometry.q_max() * grid_oversampling); }

  void validate() const {
    geometry.validate();
    if (!(reference_atoms > 0 && reference_diameter > 0 && photon_scale >= 0)) {
      throw std::invalid_argument("simulator: reference size and photon scale must be positive");
    }
    if (!(gaussian_noise_std >= 0 && fluence_sigma_log >= 0)) {
      throw std::invalid_argument("simulator: noise parameters must be non-negative");
    }
    if (!(min_atoms >= 1 && max_atoms >= min_atoms && size_bins >= 1)) {
      throw std::invalid_argument("simulator: need 1 <= min_atoms <= max_atoms and size_bins >= 1");
    }
    if (!(grid_oversampling >= 1)) throw std::invalid_argument("simulator: grid_oversampling must be >= 1");
    if (!(min_separation > 0 && max_separation >= min_separation)) {
      throw std::invalid_argument("simulator: separation range must be positive and ordered");
    }
  }
};

/// Point-cloud scatterer centred on its centroid.
struct Particle {
  std::vector<std::array<double, 3>> atoms;
  std::uint64_t particle_id = 0;
  double diameter = 0;

  std::size_t n_atoms() const { return atoms.size(); }
};

/// Compact random blob: atoms spread uniformly over 3-6 overlapping balls
/// (the lobes), then recentred. The sharp lobe surfaces carry speckle out to
/// the edge of the detector.
inline Particle generate_particle(std::size_t n_atoms, Rng& rng, const SimulatorConfig& config = {}) {
  if (n_atoms == 0) throw std::invalid_argument("generate_particle: n_atoms must be >= 1");
  Particle p;
  p.particle_id = rng();
  p.diameter = config.diameter(n_atoms);
  const double D = p.diameter;
  std::uniform_int_distribution<int> nlobes(3, 6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  auto unit_ball = [&] {
    std::array<double, 3> d{z(rng), z(rng), z(rng)};
    const double n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) + 1e-300;
    const double r = std::cbrt(u(rng));
    for (double& v : d) v *= r / n;
    return d;
  };
  struct Lobe {
    std::array<double, 3> centre;
    double radius, weight;
  };
  std::vector<Lobe> lobes(static_cast<std::size_t>(nlobes(rng)));
  double wsum = 0;
  for (auto& l : lobes) {
    l.centre = unit_ball();
    for (double& v : l.centre) v *= 0.25 * D;
    l.radius = D * (0.18 + 0.14 * u(rng));
    l.weight = l.radius * l.radius * l.radius;
    wsum += l.weight;
  }
  p.atoms.resize(n_atoms);
  std::array<double, 3> mean{0, 0, 0};
  for (auto& a : p.atoms) {
    double pick = u(rng) * wsum;
    const Lobe* l = &lobes.back();
    for (const auto& cand : lobes) {
      if (pick < cand.weight) {
        l = &cand;
        break;
      }
      pick -= cand.weight;
    }
    const auto b = unit_ball();
    for (int k = 0; k < 3; ++k) {
      a[k] = l->centre[k] + l->radius * b[k];
      mean[k] += a[k];
    }
  }
  for (int k = 0; k < 3; ++k) mean[k] /= static_cast<double>(n_atoms);
  for (auto& a : p.atoms)
    for (int k = 0; k < 3; ++k) a[k] -= mean[k];
  return p;
}

/// Unit quaternion (w, x, y, z) uniform on SO(3).
inline std::array<double, 4> random_orientation(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double u1 = u(rng), u2 = u(rng), u3 = u(rng);
  const double a = std::sqrt(1 - u1), b = std::sqrt(u1);
  const double t2 = 2 * std::numbers::pi * u2, t3 = 2 * std::numbers::pi * u3;
  return {b * std::cos(t3), a * std::sin(t2), a * std::cos(t2), b * std::sin(t3)};
}

/// A particle in the beam: orientation plus in-plane offset of its centroid.
struct Placement {
  const Particle* particle = nullptr;
  std::array<double, 4> orientation{1, 0, 0, 0};
  double shift_x = 0;
  double shift_y = 0;
};

using Field = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

inline std::vector<double> q_axis(const DetectorGeometry& g, Region region) {
  const std::size_t lo = region == Region::crop ? g.crop_offset() : 0;
  const std::size_t n = region == Region::crop ? g.crop : g.pixels;
  std::vector<double> q(n);
  for (std::size_t i = 0; i < n; ++i) q[i] = g.q(lo + i);
  return q;
}

// exp(i q (origin + k * step)) for every q and grid index k.
inline Eigen::MatrixXcd phase_matrix(const std::vector<double>& q, double origin, double step, std::size_t n) {
  Eigen::MatrixXcd m(static_cast<Eigen::Index>(q.size()), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < q.size(); ++i)
    for (std::size_t k = 0; k < n; ++k) {
      const double ph = q[i] * (origin + static_cast<double>(k) * step);
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = {std::cos(ph), std::sin(ph)};
    }
  return m;
}

}  // namespace detail

/// Far-field amplitude of the placed particles in the flat small-angle limit:
/// F(q) = sum over atoms of exp(i q . r_xy). Each projected atom is spread
/// onto a fine real-space grid with cloud-in-cell weights (the scatterers'
/// form factor) and the grid is transformed separably. Rows index q_y.
inline Field scattered_field(std::span<const Placement> placements, const SimulatorConfig& config,
                             Region region = Region::crop) {
  const auto qs = detail::q_axis(config.geometry, region);
  const auto Q = static_cast<Eigen::Index>(qs.size());
  Field total = Field::Zero(Q, Q);
  const double step = config.grid_step();
  for (const Placement& pl : placements) {
    if (!pl.particle || pl.particle->atoms.empty()) continue;
    const auto& q = pl.orientation;
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    // First two rows of the rotation matrix: the projection onto the detector plane.
    const double r00 = 1 - 2 * (y * y + z * z), r01 = 2 * (x * y - w * z), r02 = 2 * (x * z + w * y);
    const double r10 = 2 * (x * y + w * z), r11 = 1 - 2 * (x * x + z * z), r12 = 2 * (y * z - w * x);
    const auto& atoms = pl.particle->atoms;
    std::vector<double> px(atoms.size()), py(atoms.size());
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (std::size_t a = 0; a < atoms.size(); ++a) {
      px[a] = r00 * atoms[a][0] + r01 * atoms[a][1] + r02 * atoms[a][2];
      py[a] = r10 * atoms[a][0] + r11 * atoms[a][1] + r12 * atoms[a][2];
      xmin = std::min(xmin, px[a]);
      xmax = std::max(xmax, px[a]);
      ymin = std::min(ymin, py[a]);
      ymax = std::max(ymax, py[a]);
    }
    const double x0 = (std::floor(xmin / step) - 1) * step, y0 = (std::floor(ymin / step) - 1) * step;
    const auto nx = static_cast<std::size_t>(std::ceil((xmax - x0) / step)) + 2;
    const auto ny = static_cast<std::size_t>(std::ceil((ymax - y0) / step)) + 2;
    Eigen::MatrixXd rho = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ny), static_cast<Eigen::Index>(nx));
    for (std::size_t a = 0; a < atoms.size(); ++a) {
      const double fx = (px[a] - x0) / step, fy = (py[a] - y0) / step;
      const auto ix = static_cast<Eigen::Index>(std::floor(fx)), iy = static_cast<Eigen::Index>(std::floor(fy));
      const double tx = fx - static_cast<double>(ix), ty = fy - static_cast<double>(iy);
      rho(iy, ix) += (1 - tx) * (1 - ty);
      rho(iy, ix + 1) += tx * (1 - ty);
      rho(iy + 1, ix) += (1 - tx) * ty;
      rho(iy + 1, ix + 1) += tx * ty;
    }
    const Eigen::MatrixXcd ex = detail::phase_matrix(qs, x0 + pl.shift_x, step, nx);
    const Eigen::MatrixXcd ey = detail::phase_matrix(qs, y0 + pl.shift_y, step, ny);
    const Eigen::MatrixXcd half = ey * rho.cast<std::complex<double>>();  // [q_y, x]
    total.noalias() += half * ex.transpose();
  }
  return total;
}

/// Noise-free expected photon counts per pixel (no masks):
/// fluence_factor * photon_scale * |F(q)|^2.
inline std::vector<double> expected_intensity(std::span<const Placement> placements, const SimulatorConfig& config,
                                              double fluence_factor, Region region = Region::crop) {
  const Field f = scattered_field(placements, config, region);
  std::vector<double> out(static_cast<std::size_t>(f.size()));
  for (Eigen::Index i = 0; i < f.size(); ++i) out[static_cast<std::size_t>(i)] = config.photon_scale * std::norm(f.data()[i]);
  for (double& v : out) v = fluence_factor * v;
  return out;
}

/// Log-normal fluence jitter with unit mean.
inline double sample_fluence_factor(Rng& rng, double sigma_log = 0.5) {
  std::normal_distribution<double> n(-0.5 * sigma_log * sigma_log, sigma_log);
  return std::exp(n(rng));
}

/// A cropped frame ready for the networks.
struct SpecklePattern {
  std::vector<float> intensity;
  std::vector<std::uint8_t> mask;
  PatternRecord record;
};

/// Shot noise, normalisation by the pre-noise mean, additive Gaussian noise,
/// clamping at zero and the detector masks, applied to an expected-count map
/// over the crop window.
inline void apply_detector_response(std::span<const double> expected, const SimulatorConfig& config, Rng& rng,
                                    SpecklePattern& out) {
  const auto& g = config.geometry;
  const std::size_t P = g.crop * g.crop;
  if (expected.size() != P) throw ShapeError("detector response expects a crop-sized expected-count map");
  double mean = 0;
  for (double v : expected) mean += v;
  mean /= static_cast<double>(P);
  const double scale = mean > 0 ? 1.0 / mean : 1.0;
  out.mask = g.crop_mask();
  out.intensity.assign(P, 0.0f);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t i = 0; i < P; ++i) {
    const double lam = expected[i];
    double counts = 0;
    if (lam > config.poisson_gaussian_threshold) {
      counts = std::max(0.0, std::round(lam + std::sqrt(lam) * gauss(rng)));
    } else if (lam > 0) {
      counts = static_cast<double>(std::poisson_distribution<long long>(lam)(rng));
    }
    double v = counts * scale;
    if (config.gaussian_noise_std > 0) v += config.gaussian_noise_std * gauss(rng);
    v = std::max(v, 0.0);
    out.intensity[i] = out.mask[i] ? static_cast<float>(v) : 0.0f;
  }
}

/// Full forward model for one pulse. An empty placement list yields a no-hit
/// frame: background photons and detector noise only.
inline SpecklePattern diffract(std::span<const Placement> placements, const SimulatorConfig& config,
                               double fluence_factor, Rng& rng) {
  std::vector<double> lam;
  if (placements.empty()) {
    lam.assign(config.geometry.crop * config.geometry.crop, fluence_factor * config.background_photons);
  } else {
    lam = expected_intensity(placements, config, fluence_factor);
  }
  SpecklePattern p;
  apply_detector_response(lam, config, rng, p);
  p.record.multiplicity = static_cast<int>(placements.size());
  p.record.label = placements.empty() ? HitLabel::no_hit
                                      : (placements.size() == 1 ? HitLabel::single_hit : HitLabel::multi_hit);
  p.record.fluence_factor = fluence_factor;
  return p;
}

/// Expected counts of a parasitic-scattering frame: a diffuse central blob and
/// a few streaks through the beam axis, with roughly the photon budget of a
/// reference particle hit.
inline std::vector<double> non_sample_expected(const SimulatorConfig& config, double fluence_factor, Rng& rng) {
  const auto& g = config.geometry;
  const std::size_t S = g.crop;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double c = (static_cast<double>(S) - 1) / 2;
  const double bx = c + 6 * (u(rng) - 0.5), by = c + 6 * (u(rng) - 0.5);
  const double bw = 3 + 7 * u(rng), blob_amp = 0.3 + 0.7 * u(rng);
  struct Streak {
    double cos_t, sin_t, width, decay, amp;
  };
  std::vector<Streak> streaks(1 + static_cast<std::size_t>(u(rng) * 3));
  for (auto& s : streaks) {
    const double t = std::numbers::pi * u(rng);
    s = {std::cos(t), std::sin(t), 0.8 + 1.7 * u(rng), 8 + 30 * u(rng), 0.5 + u(rng)};
  }
  std::vector<double> lam(S * S);
  double sum = 0;
  for (std::size_t r = 0; r < S; ++r)
    for (std::size_t k = 0; k < S; ++k) {
      const double dx = static_cast<double>(k) - bx, dy = static_cast<double>(r) - by;
      double v = blob_amp * std::exp(-(dx * dx + dy * dy) / (2 * bw * bw));
      for (const auto& s : streaks) {
        const double along = dx * s.cos_t + dy * s.sin_t, across = -dx * s.sin_t + dy * s.cos_t;
        v += s.amp * std::exp(-across * across / (2 * s.width * s.width)) * s.decay / (s.decay + std::abs(along));
      }
      lam[r * S + k] = v;
      sum += v;
    }
  const double target = fluence_factor * config.non_sample_photons * std::exp(std::log(0.5) + std::log(4.0) * u(rng));
  for (double& v : lam) v *= target / (sum / static_cast<double>(S * S));
  return lam;
}


/// One particle species. Every frame of a sample shows copies of the same particle.
struct SampleSpec {
  int sample_id = 0;
  std::size_t size_bin = 0;
  Particle particle;
};

/// Bin b of `size_bins` equal-width bins over [min_atoms, max_atoms].
inline std::pair<double, double> size_bin_range(std::size_t bin, const SimulatorConfig& config) {
  if (bin >= config.size_bins) throw std::out_of_range("size bin " + std::to_string(bin) + " out of range");
  const double w = (config.max_atoms - config.min_atoms) / static_cast<double>(config.size_bins);
  return {config.min_atoms + w * static_cast<double>(bin), config.min_atoms + w * static_cast<double>(bin + 1)};
}

/// Species `sample_id` of a run. The size bin is drawn uniformly unless given,
/// the atom count uniformly within the bin.
inline SampleSpec make_sample(int sample_id, std::uint64_t seed, const SimulatorConfig& config,
                              std::optional<std::size_t> size_bin = std::nullopt) {
  Rng rng = make_stream(seed, static_cast<std::uint64_t>(sample_id), 0x5a3b1e);
  SampleSpec s;
  s.sample_id = sample_id;
  s.size_bin = size_bin ? *size_bin
                        : std::uniform_int_distribution<std::size_t>(0, config.size_bins - 1)(rng);
  const auto [lo, hi] = size_bin_range(s.size_bin, config);
  const double n = std::uniform_real_distribution<double>(lo, hi)(rng);
  s.particle = generate_particle(static_cast<std::size_t>(std::max(1.0, std::round(n))), rng, config);
  return s;
}

inline Category category_of(const PatternRecord& r) {
  switch (r.label) {
    case HitLabel::no_hit: return Category::no_hit;
    case HitLabel::non_sample_hit: return Category::non_sample_hit;
    default: break;
  }
  switch (r.multiplicity) {
    case 1: return Category::single;
    case 2: return Category::double_hit;
    case 3: return Category::triple;
    case 4: return Category::quadruple;
  }
  throw std::invalid_argument("pattern '" + r.id + "' has multiplicity " + std::to_string(r.multiplicity));
}

/// Random placements of `count` copies: each copy sits between min_separation
/// and max_separation diameters from the previous one.
inline std::vector<Placement> random_placements(const Particle& p, int count, const SimulatorConfig& config,
                                                Rng& rng) {
  std::vector<Placement> out;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double x = 0, y = 0;
  for (int k = 0; k < count; ++k) {
    if (k > 0) {
      const double r = p.diameter * (config.min_separation + (config.max_separation - config.min_separation) * u(rng));
      const double t = 2 * std::numbers::pi * u(rng);
      x += r * std::cos(t);
      y += r * std::sin(t);
    }
    out.push_back({&p, random_orientation(rng), x, y});
  }
  return out;
}

/// Renders one frame. Everything but the detector noise is drawn from the
/// pattern's geometry stream, so rerendering with another `fluence_scale`
/// keeps particles, orientations and jitter.
inline SpecklePattern render_pattern(const SampleSpec& sample, Category category, std::uint64_t pattern_seed,
                                     const SimulatorConfig& config, double fluence_scale = 1.0) {
  if (!(fluence_scale >= 0) || !std::isfinite(fluence_scale)) {
    throw std::invalid_argument("render_pattern: fluence scale must be finite and non-negative");
  }
  Rng geo = make_stream(pattern_seed, 0);
  Rng noise = make_stream(pattern_seed, 1);
  const double factor = fluence_scale * sample_fluence_factor(geo, config.fluence_sigma_log);
  SpecklePattern p;
  if (category == Category::non_sample_hit) {
    const auto lam = non_sample_expected(config, factor, geo);
    apply_detector_response(lam, config, noise, p);
    p.record.multiplicity = 0;
    p.record.label = HitLabel::non_sample_hit;
    p.record.fluence_factor = factor;
  } else {
    const auto placements = random_placements(sample.particle, multiplicity(category), config, geo);
    p = diffract(placements, config, factor, noise);
  }
  p.record.sample_id = sample.sample_id;
  p.record.seed = pattern_seed;
  if (category != Category::no_hit && category != Category::non_sample_hit) {
    p.record.n_atoms = sample.particle.n_atoms();
    p.record.particle_id = sample.particle.particle_id;
  }
  return p;
}

inline std::uint64_t pattern_seed(std::uint64_t seed, int sample_id, Category category, std::size_t index) {
  return stream_seed(stream_seed(seed, static_cast<std::uint64_t>(sample_id), 0x7e11 + static_cast<int>(category)),
                     index);
}

inline std::string pattern_id(int sample_id, Category category, std::size_t index) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "s%03d-%s-%05zu", sample_id, to_string(category), index);
  return buf;
}

struct BuildSpec {
  std::size_t per_category = 100;
  std::vector<Category> categories{Category::single, Category::double_hit, Category::triple, Category::quadruple};
  std::uint64_t seed = 0;
  double fluence_scale = 1.0;
  std::size_t threads = default_thread_count();
};

/// Frames ordered by sample, then category, then index. Identical for any
/// thread count.
inline Dataset build_dataset(std::span<const SampleSpec> samples, const BuildSpec& spec,
                             const SimulatorConfig& config) {
  config.validate();
  struct Job {
    const SampleSpec* sample;
    Category category;
    std::size_t index;
  };
  std::vector<Job> jobs;
  for (const auto& s : samples)
    for (Category c : spec.categories)
      for (std::size_t i = 0; i < spec.per_category; ++i) jobs.push_back({&s, c, i});
  std::vector<SpecklePattern> out(jobs.size());
  parallel_for(jobs.size(), spec.threads, [&](std::size_t j) {
    const Job& job = jobs[j];
    out[j] = render_pattern(*job.sample, job.category, pattern_seed(spec.seed, job.sample->sample_id, job.category, job.index),
                            config, spec.fluence_scale);
    out[j].record.id = pattern_id(job.sample->sample_id, job.category, job.index);
    out[j].record.source = out[j].record.id;
  });
  Dataset ds(config.geometry.crop);
  ds.reserve(out.size());
  for (auto& p : out) ds.add(std::move(p.record), p.intensity, p.mask);
  ds.attributes()["seed"] = std::to_string(spec.seed);
  ds.attributes()["detector_pixels"] = std::to_string(config.geometry.pixels);
  ds.attributes()["fluence_scale"] = format_double(spec.fluence_scale);
  ds.attributes()["photon_scale"] = format_double(config.photon_scale);
  return ds;
}

inline std::vector<SampleSpec> make_samples(std::span<const int> sample_ids, std::uint64_t seed,
                                            const SimulatorConfig& config) {
  std::vector<SampleSpec> out;
  for (int id : sample_ids) out.push_back(make_sample(id, seed, config));
  return out;
}

/// `n_samples` species with ids first_id, first_id + 1, ...
inline Dataset build_dataset(std::size_t n_samples, const BuildSpec& spec, const SimulatorConfig& config,
                             int first_id = 0) {
  std::vector<int> ids(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) ids[i] = first_id + static_cast<int>(i);
  const auto samples = make_samples(ids, spec.seed, config);
  return build_dataset(samples, spec, config);
}

/// The frames of `ds` rendered again at `fluence_scale` times their original
/// jitter. `samples` must hold every sample id of `ds`.
inline Dataset rerender(const Dataset& ds, std::span<const SampleSpec> samples, const SimulatorConfig& config,
                        double fluence_scale, std::size_t threads = default_thread_count()) {
  std::vector<SpecklePattern> out(ds.size());
  parallel_for(ds.size(), threads, [&](std::size_t i) {
    const PatternRecord& r = ds.record(i);
    const SampleSpec* s = nullptr;
    for (const auto& cand : samples)
      if (cand.sample_id == r.sample_id) s = &cand;
    if (!s) throw std::invalid_argument("rerender: no sample spec for sample " + std::to_string(r.sample_id));
    out[i] = render_pattern(*s, category_of(r), r.seed, config, fluence_scale);
    out[i].record.id = r.id;
    out[i].record.source = r.source;
  });
  Dataset res(ds.frame_size());
  res.attributes() = ds.attributes();
  res.attributes()["fluence_scale"] = format_double(fluence_scale);
  for (auto& p : out) res.add(std::move(p.record), p.intensity, p.mask);
  return res;
}

}  // namespace specklenn
