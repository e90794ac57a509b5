// keto - keypoint-driven tool manipulation lab
//
// Learned keypoint generator: a point-set encoder feeding a latent-variable
// proposal head (trained on succeeded keypoints with an l1 reconstruction
// loss plus a KL term) and an evaluation head (sigmoid success scorer).
// Clouds are canonicalized (centroid, PCA rotation, scale) before the
// network so desk-scale training does not have to relearn planar pose
// equivariance.

#ifndef KETO_LEARNER_HPP
#define KETO_LEARNER_HPP

#include <array>
#include <string>
#include <vector>

#include "keto/cloud_io.hpp"
#include "keto/keypoints.hpp"
#include "keto/nn.hpp"

namespace keto {

enum class HeadKind : std::uint8_t { proposal = 0, evaluation = 1 };

namespace learner_constants {
inline constexpr std::size_t kNetPoints = 64;  // encoder input subsample
inline constexpr int kLatentDim = 4;
inline constexpr int kKeypointDim = 6;
inline constexpr std::uint64_t kSubsampleSeed = 0x6E4E4554ull;
}  // namespace learner_constants

// ---------------------------------------------------------------------------
// Canonical frame
// ---------------------------------------------------------------------------

/// Rigid + scale normalization: canonical = R(-angle) (p - centroid) / scale.
/// The angle comes from the planar PCA major axis with its sign fixed by
/// the third moment, so rotated observations of one tool map to (nearly)
/// the same canonical cloud.
struct CanonFrame {
  Vec2 centroid;
  double angle = 0.0;
  double scale = 1.0;

  Vec2 to_canon(Vec2 p) const { return (p - centroid).rotated(-angle) / scale; }
  Vec2 from_canon(Vec2 p) const { return (p * scale).rotated(angle) + centroid; }
};

inline CanonFrame compute_frame(const PointCloud& cloud) {
  if (cloud.empty()) fail("empty-cloud", "cannot canonicalize empty cloud");
  CanonFrame f;
  f.centroid = cloud.centroid_xy();
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& p : cloud.points) {
    Vec2 d = p.xy() - f.centroid;
    sxx += d.x * d.x;
    sxy += d.x * d.y;
    syy += d.y * d.y;
  }
  double theta = 0.5 * std::atan2(2.0 * sxy, sxx - syy);
  Vec2 major{std::cos(theta), std::sin(theta)};
  double m3 = 0.0;
  for (const auto& p : cloud.points) {
    double t = major.dot(p.xy() - f.centroid);
    m3 += t * t * t;
  }
  if (m3 < 0.0) theta = wrap_angle(theta + kPi);
  f.angle = theta;
  f.scale = std::max(cloud.radius_about(f.centroid), 1e-6);
  return f;
}

/// Deterministic with-replacement subsample indices (depends only on count).
inline std::vector<std::size_t> net_subsample_indices(std::size_t count) {
  using namespace learner_constants;
  std::vector<std::size_t> idx;
  if (count <= kNetPoints) {
    idx.resize(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = i;
    return idx;
  }
  Rng rng(mix_seed(kSubsampleSeed, count));
  idx.resize(kNetPoints);
  for (std::size_t i = 0; i < kNetPoints; ++i) idx[i] = rng.uniform_int(count);
  return idx;
}

template <typename T>
std::vector<T> canonical_points(const PointCloud& cloud, const CanonFrame& f) {
  auto idx = net_subsample_indices(cloud.count());
  std::vector<T> out;
  out.reserve(idx.size() * 3);
  for (std::size_t i : idx) {
    const Vec3& p = cloud.points[i];
    Vec2 c = f.to_canon(p.xy());
    out.push_back(static_cast<T>(c.x));
    out.push_back(static_cast<T>(c.y));
    out.push_back(static_cast<T>(p.z / f.scale));
  }
  return out;
}

inline std::array<double, 6> canonical_keypoints(const ToolKeypoints& k,
                                                 const CanonFrame& f) {
  Vec2 g = f.to_canon(k.x_g), x = f.to_canon(k.x_f), e = f.to_canon(k.x_e);
  return {g.x, g.y, x.x, x.y, e.x, e.y};
}

inline ToolKeypoints keypoints_from_canonical(const std::array<double, 6>& v,
                                              const CanonFrame& f) {
  ToolKeypoints k;
  k.x_g = f.from_canon({v[0], v[1]});
  k.x_f = f.from_canon({v[2], v[3]});
  k.x_e = f.from_canon({v[4], v[5]});
  return k;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Flat, serializable network parameters. Proposal models hold the encoder
/// (2 layers), recognition branch (3) and decoder (3); evaluation models
/// hold the encoder (2) and scoring head (3). norm stores the model-level
/// normalization constants (identity here; clouds are normalized per
/// observation).
struct NetParams {
  HeadKind head = HeadKind::evaluation;
  std::vector<nn::Linear<float>> layers;
  std::array<float, 3> norm = {0.0f, 0.0f, 1.0f};

  bool finite() const {
    for (const auto& l : layers) {
      for (float w : l.W) {
        if (!std::isfinite(w)) return false;
      }
      for (float b : l.b) {
        if (!std::isfinite(b)) return false;
      }
    }
    return true;
  }
};

template <typename T>
struct ProposalNet {
  nn::PointEncoder<T> enc;
  nn::Mlp3<T> rec;  // (feature + keypoints) -> (mu, logvar)
  nn::Mlp3<T> dec;  // (feature + latent) -> keypoints

  void init(std::uint64_t seed) {
    using namespace learner_constants;
    Rng rng(mix_seed(seed, 0x50524F50ull));
    enc.init(rng);
    rec.init(nn::kFeatureDim + kKeypointDim, 128, 64, 2 * kLatentDim, rng);
    dec.init(nn::kFeatureDim + kLatentDim, 128, 64, kKeypointDim, rng);
  }
};

template <typename T>
struct EvalNet {
  nn::PointEncoder<T> enc;
  nn::Mlp3<T> head;  // (feature + keypoints) -> logit

  void init(std::uint64_t seed) {
    using namespace learner_constants;
    Rng rng(mix_seed(seed, 0x4556414Cull));
    enc.init(rng);
    head.init(nn::kFeatureDim + kKeypointDim, 128, 64, 1, rng);
  }
};

namespace detail {

template <typename T, typename U>
nn::Linear<T> cast_layer(const nn::Linear<U>& src) {
  nn::Linear<T> out;
  out.in = src.in;
  out.out = src.out;
  out.W.assign(src.W.begin(), src.W.end());
  out.b.assign(src.b.begin(), src.b.end());
  return out;
}

template <typename T>
void check_dims(const std::vector<nn::Linear<T>>& layers, HeadKind head) {
  using namespace learner_constants;
  auto expect = [&](std::size_t idx, int in, int out) {
    if (idx >= layers.size() || layers[idx].in != in ||
        layers[idx].out != out) {
      fail("bad-params", "layer " + std::to_string(idx) + " dims mismatch");
    }
  };
  expect(0, nn::kPointDim, nn::kHidden1);
  expect(1, nn::kHidden1, nn::kFeatureDim);
  if (head == HeadKind::proposal) {
    if (layers.size() != 8) fail("bad-params", "proposal wants 8 layers");
    expect(2, nn::kFeatureDim + kKeypointDim, 128);
    expect(3, 128, 64);
    expect(4, 64, 2 * kLatentDim);
    expect(5, nn::kFeatureDim + kLatentDim, 128);
    expect(6, 128, 64);
    expect(7, 64, kKeypointDim);
  } else {
    if (layers.size() != 5) fail("bad-params", "evaluation wants 5 layers");
    expect(2, nn::kFeatureDim + kKeypointDim, 128);
    expect(3, 128, 64);
    expect(4, 64, 1);
  }
}

}  // namespace detail

template <typename T>
NetParams to_params(const ProposalNet<T>& net) {
  NetParams p;
  p.head = HeadKind::proposal;
  p.layers = {detail::cast_layer<float>(net.enc.l1),
              detail::cast_layer<float>(net.enc.l2),
              detail::cast_layer<float>(net.rec.l1),
              detail::cast_layer<float>(net.rec.l2),
              detail::cast_layer<float>(net.rec.l3),
              detail::cast_layer<float>(net.dec.l1),
              detail::cast_layer<float>(net.dec.l2),
              detail::cast_layer<float>(net.dec.l3)};
  return p;
}

template <typename T>
NetParams to_params(const EvalNet<T>& net) {
  NetParams p;
  p.head = HeadKind::evaluation;
  p.layers = {detail::cast_layer<float>(net.enc.l1),
              detail::cast_layer<float>(net.enc.l2),
              detail::cast_layer<float>(net.head.l1),
              detail::cast_layer<float>(net.head.l2),
              detail::cast_layer<float>(net.head.l3)};
  return p;
}

template <typename T>
ProposalNet<T> proposal_from_params(const NetParams& p) {
  if (p.head != HeadKind::proposal) fail("bad-params", "not a proposal head");
  detail::check_dims(p.layers, p.head);
  ProposalNet<T> net;
  net.enc.l1 = detail::cast_layer<T>(p.layers[0]);
  net.enc.l2 = detail::cast_layer<T>(p.layers[1]);
  net.rec.l1 = detail::cast_layer<T>(p.layers[2]);
  net.rec.l2 = detail::cast_layer<T>(p.layers[3]);
  net.rec.l3 = detail::cast_layer<T>(p.layers[4]);
  net.dec.l1 = detail::cast_layer<T>(p.layers[5]);
  net.dec.l2 = detail::cast_layer<T>(p.layers[6]);
  net.dec.l3 = detail::cast_layer<T>(p.layers[7]);
  return net;
}

template <typename T>
EvalNet<T> eval_from_params(const NetParams& p) {
  if (p.head != HeadKind::evaluation) {
    fail("bad-params", "not an evaluation head");
  }
  detail::check_dims(p.layers, p.head);
  EvalNet<T> net;
  net.enc.l1 = detail::cast_layer<T>(p.layers[0]);
  net.enc.l2 = detail::cast_layer<T>(p.layers[1]);
  net.head.l1 = detail::cast_layer<T>(p.layers[2]);
  net.head.l2 = detail::cast_layer<T>(p.layers[3]);
  net.head.l3 = detail::cast_layer<T>(p.layers[4]);
  return net;
}

// ---------------------------------------------------------------------------
// Model file ("KETM")
// ---------------------------------------------------------------------------

inline std::string encode_model(const NetParams& p) {
  std::string out = "KETM";
  detail::put_u16(out, 1);
  out.push_back(static_cast<char>(p.head));
  detail::put_u16(out, static_cast<std::uint16_t>(p.layers.size()));
  for (const auto& l : p.layers) {
    detail::put_u32(out, static_cast<std::uint32_t>(l.in));
    detail::put_u32(out, static_cast<std::uint32_t>(l.out));
  }
  for (const auto& l : p.layers) {
    for (float w : l.W) detail::put_f32(out, w);
    for (float b : l.b) detail::put_f32(out, b);
  }
  for (float n : p.norm) detail::put_f32(out, n);
  return out;
}

inline NetParams decode_model(const std::string& bytes) {
  detail::ByteReader r(bytes.data(), bytes.size());
  r.expect("KETM", 4);
  if (r.u16() != 1) fail("parse-error", "unsupported KETM version");
  NetParams p;
  std::uint8_t head = r.u8();
  if (head > 1) fail("parse-error", "unknown head kind");
  p.head = static_cast<HeadKind>(head);
  std::uint16_t count = r.u16();
  p.layers.resize(count);
  for (auto& l : p.layers) {
    l.in = static_cast<int>(r.u32());
    l.out = static_cast<int>(r.u32());
    if (l.in <= 0 || l.out <= 0 || l.in > 4096 || l.out > 4096) {
      fail("parse-error", "implausible layer dims");
    }
  }
  for (auto& l : p.layers) {
    l.W.resize(static_cast<std::size_t>(l.in) * l.out);
    l.b.resize(l.out);
    for (auto& w : l.W) w = r.f32();
    for (auto& b : l.b) b = r.f32();
  }
  for (auto& n : p.norm) n = r.f32();
  detail::check_dims(p.layers, p.head);
  return p;
}

inline void save_model(const std::string& path, const NetParams& p) {
  detail::write_file_bytes(path, encode_model(p));
}

inline NetParams load_model(const std::string& path) {
  return decode_model(detail::read_file_bytes(path));
}

// ---------------------------------------------------------------------------
// Training data
// ---------------------------------------------------------------------------

/// Normalized training tuples: canonical clouds (flattened, subsampled),
/// canonical 6-vector keypoints and binary success labels.
struct TrainBatch {
  std::vector<std::vector<float>> clouds;
  std::vector<std::array<float, 6>> keypoints;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }

  void append(const PointCloud& cloud, const ToolKeypoints& k, int label) {
    CanonFrame f = compute_frame(cloud);
    clouds.push_back(canonical_points<float>(cloud, f));
    auto kc = canonical_keypoints(k, f);
    std::array<float, 6> kf;
    for (int i = 0; i < 6; ++i) kf[i] = static_cast<float>(kc[i]);
    keypoints.push_back(kf);
    labels.push_back(label ? 1 : 0);
  }
};

/// Training hyperparameters. Desk-scale defaults; the paper-scale preset
/// (120k iterations, batch 128, lr 1e-4) lives in the harness.
struct Hyper {
  double learning_rate = 1e-3;
  int batch = 64;
  int iterations = 5000;
  int latent_dim = learner_constants::kLatentDim;
  double kl_weight = 0.1;
  std::uint64_t seed = 0;
};

struct TrainResult {
  NetParams params;
  std::vector<double> loss;  // per-iteration batch loss
};

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

/// Pooled point-set feature of an already-normalized cloud.
inline std::vector<float> encode(const PointCloud& normalized_cloud,
                                 const NetParams& params) {
  detail::check_dims(params.layers, params.head);
  nn::PointEncoder<float> enc;
  enc.l1 = detail::cast_layer<float>(params.layers[0]);
  enc.l2 = detail::cast_layer<float>(params.layers[1]);
  std::vector<float> pts;
  pts.reserve(normalized_cloud.count() * 3);
  for (const auto& p : normalized_cloud.points) {
    pts.push_back(static_cast<float>(p.x));
    pts.push_back(static_cast<float>(p.y));
    pts.push_back(static_cast<float>(p.z));
  }
  std::vector<float> feature(nn::kFeatureDim);
  typename nn::PointEncoder<float>::Cache cache;
  enc.forward(pts, feature.data(), cache);
  return feature;
}

namespace detail {

/// Decode-and-snap proposal candidates given a precomputed feature.
inline std::vector<ToolKeypoints> decode_proposals(
    const ProposalNet<float>& net, const PointCloud& cloud,
    const CanonFrame& frame, const std::vector<float>& feature,
    std::size_t count_b, std::uint64_t seed) {
  using namespace learner_constants;
  Rng rng(mix_seed(seed, 0x50524F5053ull));
  std::vector<ToolKeypoints> out;
  std::vector<float> input(nn::kFeatureDim + kLatentDim);
  std::copy(feature.begin(), feature.end(), input.begin());
  std::vector<float> decoded(kKeypointDim);
  typename nn::Mlp3<float>::Cache dcache;
  for (std::size_t b = 0; b < count_b; ++b) {
    for (int i = 0; i < kLatentDim; ++i) {
      input[nn::kFeatureDim + i] = static_cast<float>(rng.normal());
    }
    net.dec.forward(input.data(), decoded.data(), dcache);
    std::array<double, 6> kc;
    for (int i = 0; i < 6; ++i) kc[i] = decoded[i];
    ToolKeypoints k = keypoints_from_canonical(kc, frame);
    k.x_g = cloud.points[nearest_point_xy(cloud, k.x_g)].xy();
    k.x_f = cloud.points[nearest_point_xy(cloud, k.x_f)].xy();
    Vec2 dir = k.x_e - k.x_f;
    k.x_e = k.x_f + (dir.norm() > 1e-9 ? dir.normalized() : Vec2{1.0, 0.0});
    if (validate_keypoints(k, cloud)) out.push_back(k);
  }
  return out;
}

/// Head-only score given a precomputed evaluation feature.
inline double eval_score_from_feature(const EvalNet<float>& net,
                                      const std::vector<float>& feature,
                                      const std::array<double, 6>& kp_canon) {
  using namespace learner_constants;
  std::vector<float> input(nn::kFeatureDim + kKeypointDim);
  std::copy(feature.begin(), feature.end(), input.begin());
  for (int i = 0; i < kKeypointDim; ++i) {
    input[nn::kFeatureDim + i] = static_cast<float>(kp_canon[i]);
  }
  float logit = 0.0f;
  typename nn::Mlp3<float>::Cache hcache;
  net.head.forward(input.data(), &logit, hcache);
  return nn::sigmoid(logit);
}

inline std::vector<float> encoder_feature(const nn::PointEncoder<float>& enc,
                                          const std::vector<float>& pts) {
  std::vector<float> feature(nn::kFeatureDim);
  typename nn::PointEncoder<float>::Cache ecache;
  enc.forward(pts, feature.data(), ecache);
  return feature;
}

}  // namespace detail

/// Draws B latent samples and decodes candidate keypoints conditioned on
/// the cloud feature. On-object points are snapped to the full-resolution
/// cloud, the effect offset is re-normalized to unit length, and invalid
/// candidates are dropped. Errors with "proposal-collapse" when nothing
/// survives.
inline std::vector<ToolKeypoints> propose(const PointCloud& cloud,
                                          std::size_t count_b,
                                          std::uint64_t seed,
                                          const NetParams& params) {
  auto net = proposal_from_params<float>(params);
  CanonFrame frame = compute_frame(cloud);
  auto pts = canonical_points<float>(cloud, frame);
  auto feature = detail::encoder_feature(net.enc, pts);
  auto out = detail::decode_proposals(net, cloud, frame, feature, count_b, seed);
  if (out.empty()) fail("proposal-collapse", "no valid proposals survived");
  return out;
}

/// Success score in (0, 1) for a (cloud, keypoints) pair.
inline double evaluate(const PointCloud& cloud, const ToolKeypoints& k,
                       const NetParams& params) {
  auto net = eval_from_params<float>(params);
  CanonFrame frame = compute_frame(cloud);
  auto pts = canonical_points<float>(cloud, frame);
  auto feature = detail::encoder_feature(net.enc, pts);
  return detail::eval_score_from_feature(net, feature,
                                         canonical_keypoints(k, frame));
}

/// Propose-then-argmax keypoint prediction (ties to the earliest
/// candidate). The cloud is canonicalized and encoded once per head.
inline ToolKeypoints predict_keypoints(const PointCloud& cloud,
                                       std::size_t count_b, std::uint64_t seed,
                                       const NetParams& proposal_params,
                                       const NetParams& evaluation_params) {
  auto pnet = proposal_from_params<float>(proposal_params);
  auto enet = eval_from_params<float>(evaluation_params);
  CanonFrame frame = compute_frame(cloud);
  auto pts = canonical_points<float>(cloud, frame);
  auto pfeature = detail::encoder_feature(pnet.enc, pts);
  auto candidates =
      detail::decode_proposals(pnet, cloud, frame, pfeature, count_b, seed);
  if (candidates.empty()) {
    fail("proposal-collapse", "no valid proposals survived");
  }
  auto efeature = detail::encoder_feature(enet.enc, pts);
  std::size_t best = 0;
  double best_score = -1.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    double s = detail::eval_score_from_feature(
        enet, efeature, canonical_keypoints(candidates[i], frame));
    if (s > best_score) {
      best_score = s;
      best = i;
    }
  }
  return candidates[best];
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
std::vector<std::vector<T>*> proposal_param_list(ProposalNet<T>& n) {
  return {&n.enc.l1.W, &n.enc.l1.b, &n.enc.l2.W, &n.enc.l2.b,
          &n.rec.l1.W, &n.rec.l1.b, &n.rec.l2.W, &n.rec.l2.b,
          &n.rec.l3.W, &n.rec.l3.b, &n.dec.l1.W, &n.dec.l1.b,
          &n.dec.l2.W, &n.dec.l2.b, &n.dec.l3.W, &n.dec.l3.b};
}

template <typename T>
std::vector<const std::vector<T>*> proposal_grad_list(const ProposalNet<T>& n) {
  return {&n.enc.l1.W, &n.enc.l1.b, &n.enc.l2.W, &n.enc.l2.b,
          &n.rec.l1.W, &n.rec.l1.b, &n.rec.l2.W, &n.rec.l2.b,
          &n.rec.l3.W, &n.rec.l3.b, &n.dec.l1.W, &n.dec.l1.b,
          &n.dec.l2.W, &n.dec.l2.b, &n.dec.l3.W, &n.dec.l3.b};
}

template <typename T>
std::vector<std::vector<T>*> eval_param_list(EvalNet<T>& n) {
  return {&n.enc.l1.W, &n.enc.l1.b, &n.enc.l2.W, &n.enc.l2.b, &n.head.l1.W,
          &n.head.l1.b, &n.head.l2.W, &n.head.l2.b, &n.head.l3.W,
          &n.head.l3.b};
}

template <typename T>
std::vector<const std::vector<T>*> eval_grad_list(const EvalNet<T>& n) {
  return {&n.enc.l1.W, &n.enc.l1.b, &n.enc.l2.W, &n.enc.l2.b, &n.head.l1.W,
          &n.head.l1.b, &n.head.l2.W, &n.head.l2.b, &n.head.l3.W,
          &n.head.l3.b};
}

template <typename T>
void zero_proposal(ProposalNet<T>& g, const ProposalNet<T>& like) {
  g.enc.zero_like(like.enc);
  g.rec.zero_like(like.rec);
  g.dec.zero_like(like.dec);
}

template <typename T>
void zero_eval(EvalNet<T>& g, const EvalNet<T>& like) {
  g.enc.zero_like(like.enc);
  g.head.zero_like(like.head);
}

/// Forward + backward of one proposal (CVAE) sample. Returns the sample
/// loss; gradients are scaled by `grad_scale` and accumulated.
template <typename T>
double proposal_sample_pass(const ProposalNet<T>& net,
                            const std::vector<T>& pts,
                            const std::array<float, 6>& target,
                            const std::array<T, 4>& eta, double kl_weight,
                            double grad_scale, ProposalNet<T>* grad) {
  using namespace learner_constants;
  std::vector<T> feature(nn::kFeatureDim);
  typename nn::PointEncoder<T>::Cache ecache;
  net.enc.forward(pts, feature.data(), ecache);

  // Recognition: q(z | feature, keypoints).
  std::vector<T> rec_in(nn::kFeatureDim + kKeypointDim);
  std::copy(feature.begin(), feature.end(), rec_in.begin());
  for (int i = 0; i < kKeypointDim; ++i) {
    rec_in[nn::kFeatureDim + i] = static_cast<T>(target[i]);
  }
  std::vector<T> mu_lv(2 * kLatentDim);
  typename nn::Mlp3<T>::Cache rcache;
  net.rec.forward(rec_in.data(), mu_lv.data(), rcache);

  // Reparameterized latent.
  std::array<T, kLatentDim> z, sigma;
  for (int i = 0; i < kLatentDim; ++i) {
    sigma[i] = std::exp(T(0.5) * mu_lv[kLatentDim + i]);
    z[i] = mu_lv[i] + sigma[i] * eta[i];
  }

  // Decoder.
  std::vector<T> dec_in(nn::kFeatureDim + kLatentDim);
  std::copy(feature.begin(), feature.end(), dec_in.begin());
  for (int i = 0; i < kLatentDim; ++i) dec_in[nn::kFeatureDim + i] = z[i];
  std::vector<T> decoded(kKeypointDim);
  typename nn::Mlp3<T>::Cache dcache;
  net.dec.forward(dec_in.data(), decoded.data(), dcache);

  // Losses.
  double rec_loss = 0.0;
  for (int i = 0; i < kKeypointDim; ++i) {
    rec_loss += std::abs(static_cast<double>(decoded[i]) - target[i]);
  }
  rec_loss /= kKeypointDim;
  double kl = 0.0;
  for (int i = 0; i < kLatentDim; ++i) {
    double mu = mu_lv[i], lv = mu_lv[kLatentDim + i];
    kl += 0.5 * (mu * mu + std::exp(lv) - 1.0 - lv);
  }
  double loss = rec_loss + kl_weight * kl;
  if (!grad) return loss;

  // Backward.
  std::vector<T> ddecoded(kKeypointDim);
  for (int i = 0; i < kKeypointDim; ++i) {
    double diff = static_cast<double>(decoded[i]) - target[i];
    double s = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    ddecoded[i] = static_cast<T>(grad_scale * s / kKeypointDim);
  }
  std::vector<T> ddec_in(nn::kFeatureDim + kLatentDim);
  net.dec.backward(dcache, ddecoded.data(), ddec_in.data(), grad->dec);

  std::vector<T> dmu_lv(2 * kLatentDim, T(0));
  for (int i = 0; i < kLatentDim; ++i) {
    T dz = ddec_in[nn::kFeatureDim + i];
    dmu_lv[i] = dz;                                       // via mu
    dmu_lv[kLatentDim + i] = dz * eta[i] * sigma[i] * T(0.5);  // via logvar
  }
  // KL gradients.
  for (int i = 0; i < kLatentDim; ++i) {
    double mu = mu_lv[i], lv = mu_lv[kLatentDim + i];
    dmu_lv[i] += static_cast<T>(grad_scale * kl_weight * mu);
    dmu_lv[kLatentDim + i] +=
        static_cast<T>(grad_scale * kl_weight * 0.5 * (std::exp(lv) - 1.0));
  }
  std::vector<T> drec_in(nn::kFeatureDim + kKeypointDim);
  net.rec.backward(rcache, dmu_lv.data(), drec_in.data(), grad->rec);

  // Feature gradient gathers the decoder and recognition contributions.
  std::vector<T> dfeature(nn::kFeatureDim);
  for (int i = 0; i < nn::kFeatureDim; ++i) {
    dfeature[i] = ddec_in[i] + drec_in[i];
  }
  net.enc.backward(ecache, dfeature.data(), nullptr, grad->enc);
  return loss;
}

/// Forward + backward of one evaluation (BCE) sample.
template <typename T>
double eval_sample_pass(const EvalNet<T>& net, const std::vector<T>& pts,
                        const std::array<float, 6>& kp, int label,
                        double grad_scale, EvalNet<T>* grad,
                        double* logit_out = nullptr) {
  using namespace learner_constants;
  std::vector<T> feature(nn::kFeatureDim);
  typename nn::PointEncoder<T>::Cache ecache;
  net.enc.forward(pts, feature.data(), ecache);

  std::vector<T> input(nn::kFeatureDim + kKeypointDim);
  std::copy(feature.begin(), feature.end(), input.begin());
  for (int i = 0; i < kKeypointDim; ++i) {
    input[nn::kFeatureDim + i] = static_cast<T>(kp[i]);
  }
  T logit = T(0);
  typename nn::Mlp3<T>::Cache hcache;
  net.head.forward(input.data(), &logit, hcache);
  double loss = nn::bce_loss(static_cast<double>(logit), label);
  if (logit_out) *logit_out = static_cast<double>(logit);
  if (!grad) return loss;

  T dlogit =
      static_cast<T>(grad_scale * (nn::sigmoid(static_cast<double>(logit)) -
                                   static_cast<double>(label)));
  std::vector<T> dinput(nn::kFeatureDim + kKeypointDim);
  net.head.backward(hcache, &dlogit, dinput.data(), grad->head);
  net.enc.backward(ecache, dinput.data(), nullptr, grad->enc);
  return loss;
}

}  // namespace detail

/// Forward score with reverse-mode gradients to the canonical point
/// coordinates (3 per point) and the canonical keypoint 6-vector. Used by
/// the tool creator and the input-gradient checks.
template <typename T>
double eval_score_with_input_grad(const EvalNet<T>& net,
                                  const std::vector<T>& pts,
                                  const std::array<T, 6>& kp,
                                  std::vector<T>* dpts,
                                  std::array<T, 6>* dkp) {
  using namespace learner_constants;
  std::vector<T> feature(nn::kFeatureDim);
  typename nn::PointEncoder<T>::Cache ecache;
  net.enc.forward(pts, feature.data(), ecache);

  std::vector<T> input(nn::kFeatureDim + kKeypointDim);
  std::copy(feature.begin(), feature.end(), input.begin());
  for (int i = 0; i < kKeypointDim; ++i) input[nn::kFeatureDim + i] = kp[i];
  T logit = T(0);
  typename nn::Mlp3<T>::Cache hcache;
  net.head.forward(input.data(), &logit, hcache);
  double score = nn::sigmoid(static_cast<double>(logit));

  if (dpts || dkp) {
    EvalNet<T> scratch;
    detail::zero_eval(scratch, net);
    T dlogit = static_cast<T>(score * (1.0 - score));
    std::vector<T> dinput(nn::kFeatureDim + kKeypointDim);
    net.head.backward(hcache, &dlogit, dinput.data(), scratch.head);
    if (dkp) {
      for (int i = 0; i < kKeypointDim; ++i) {
        (*dkp)[i] = dinput[nn::kFeatureDim + i];
      }
    }
    if (dpts) {
      dpts->assign(pts.size(), T(0));
      net.enc.backward(ecache, dinput.data(), dpts->data(), scratch.enc);
    }
  }
  return score;
}

/// Trains the proposal (CVAE) head on succeeded keypoints: l1
/// reconstruction plus KL(q(z|x,k) || N(0, I)). Deterministic in
/// (h.seed, data order).
inline TrainResult train_proposal(const TrainBatch& data, const Hyper& h) {
  using namespace learner_constants;
  std::vector<std::size_t> positives;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.labels[i] == 1) positives.push_back(i);
  }
  if (positives.empty()) fail("no-positive-data", "proposal needs positives");

  ProposalNet<float> net;
  net.init(h.seed);
  ProposalNet<float> grad;
  detail::zero_proposal(grad, net);
  nn::Adam<float> adam(detail::proposal_param_list(net), h.learning_rate);
  Rng rng(mix_seed(h.seed, 0x5452504Full));

  TrainResult result;
  result.loss.reserve(h.iterations);
  for (int it = 0; it < h.iterations; ++it) {
    detail::zero_proposal(grad, net);
    double batch_loss = 0.0;
    double scale = 1.0 / h.batch;
    for (int bi = 0; bi < h.batch; ++bi) {
      std::size_t idx = positives[rng.uniform_int(positives.size())];
      std::array<float, 4> eta;
      for (auto& e : eta) e = static_cast<float>(rng.normal());
      batch_loss += detail::proposal_sample_pass(
          net, data.clouds[idx], data.keypoints[idx], eta, h.kl_weight, scale,
          &grad);
    }
    adam.step(detail::proposal_grad_list(grad));
    result.loss.push_back(batch_loss / h.batch);
  }
  result.params = to_params(net);
  return result;
}

/// Trains the evaluation head with sigmoid cross-entropy on 50/50
/// resampled batches. Deterministic in (h.seed, data order).
inline TrainResult train_evaluation(const TrainBatch& data, const Hyper& h) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < data.size(); ++i) {
    (data.labels[i] == 1 ? pos : neg).push_back(i);
  }
  if (pos.empty()) fail("no-positive-data", "evaluation needs positives");
  if (neg.empty()) fail("no-negative-data", "evaluation needs negatives");

  EvalNet<float> net;
  net.init(h.seed);
  EvalNet<float> grad;
  detail::zero_eval(grad, net);
  nn::Adam<float> adam(detail::eval_param_list(net), h.learning_rate);
  Rng rng(mix_seed(h.seed, 0x54524556ull));

  TrainResult result;
  result.loss.reserve(h.iterations);
  for (int it = 0; it < h.iterations; ++it) {
    detail::zero_eval(grad, net);
    double batch_loss = 0.0;
    double scale = 1.0 / h.batch;
    for (int bi = 0; bi < h.batch; ++bi) {
      bool take_pos = bi % 2 == 0;
      const auto& pool = take_pos ? pos : neg;
      std::size_t idx = pool[rng.uniform_int(pool.size())];
      batch_loss += detail::eval_sample_pass(net, data.clouds[idx],
                                             data.keypoints[idx],
                                             data.labels[idx], scale, &grad);
    }
    adam.step(detail::eval_grad_list(grad));
    result.loss.push_back(batch_loss / h.batch);
  }
  result.params = to_params(net);
  return result;
}

}  // namespace keto

#endif  // KETO_LEARNER_HPP
