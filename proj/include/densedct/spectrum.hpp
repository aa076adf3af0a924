#pragma once

#include <array>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "densedct/channel_selection.hpp"

namespace densedct {

// Mean squared coefficient per frequency channel over a set of tensors.
struct EnergyProfile {
  int block_size = 8;
  std::vector<double> per_channel;
  std::vector<ChannelDescriptor> descriptors;
  std::vector<int> zigzag_pos;  // per channel, position within its component's scan

  double total() const { return pairwise_sum(std::span<const double>(per_channel)); }
};

inline EnergyProfile channel_energy(std::span<const FrequencyTensor> tensors) {
  if (tensors.empty()) throw ArgumentError("channel_energy: empty tensor stream");
  const auto& first = tensors.front();
  for (const auto& t : tensors)
    if (t.channels() != first.channels() || t.block_size != first.block_size || t.descriptors != first.descriptors)
      throw ArgumentError("channel_energy: channel layout mismatch");

  const int c = first.channels();
  std::size_t samples = 0;
  for (const auto& t : tensors) samples += t.coeffs.plane_size();

  EnergyProfile p;
  p.block_size = first.block_size;
  p.descriptors = first.descriptors;
  p.per_channel.assign(c, 0.0);
  const auto zz = zigzag_positions(first.block_size);
  const int nn = first.block_size * first.block_size;
  for (int ch = 0; ch < c; ++ch) p.zigzag_pos.push_back(zz[ch % nn]);

  // Fixed tree: per-tensor pairwise sums, then a pairwise sum over tensors.
  std::vector<double> partial(tensors.size());
  for (int ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < tensors.size(); ++i) partial[i] = pairwise_sum_squares(tensors[i].coeffs.channel(ch));
    p.per_channel[ch] = pairwise_sum(std::span<const double>(partial)) / static_cast<double>(samples);
  }
  return p;
}

struct ZigzagProfile {
  std::array<std::vector<double>, 3> components;  // Y, Cb, Cr
};

inline ZigzagProfile zigzag_profile(const EnergyProfile& p) {
  const int nn = p.block_size * p.block_size;
  if (static_cast<int>(p.per_channel.size()) != 3 * nn)
    throw ArgumentError("zigzag_profile: channel count must be 3*N^2");
  const auto order = zigzag_order(p.block_size);
  ZigzagProfile z;
  for (int comp = 0; comp < 3; ++comp) {
    z.components[comp].reserve(nn);
    for (int k : order) z.components[comp].push_back(p.per_channel[comp * nn + k]);
  }
  return z;
}

// (retained energy / total energy) / (retained channels / total channels).
inline double density_gain(const EnergyProfile& p, const ChannelSelection& sel) {
  if (sel.total != static_cast<int>(p.per_channel.size()))
    throw ArgumentError("density_gain: selection total != profile length");
  if (sel.kept.empty()) throw ArgumentError("density_gain: empty selection");
  const double total = p.total();
  if (!(total > 0.0)) throw ArgumentError("density_gain: zero total energy");
  std::vector<double> kept;
  kept.reserve(sel.kept.size());
  for (int ch : sel.kept) kept.push_back(p.per_channel[ch]);
  const double retained = pairwise_sum(std::span<const double>(kept));
  if (sel.kept.size() == p.per_channel.size()) return 1.0;
  return (retained / total) / (static_cast<double>(sel.kept.size()) / sel.total);
}

// N²·Σ_planes mean((x − level)²): the pixel-domain counterpart of
// EnergyProfile::total() for a single subsampled image (exact for nearest
// chroma upsampling). Pass kLevelShift for decoded images, 0 for residuals.
inline double plane_energy(const YcbcrImage& img, int block_size, double level = 0.0) {
  double e = 0.0;
  std::vector<double> sq;
  for (const auto* p : {&img.y, &img.cb, &img.cr}) {
    sq.resize(p->size());
    for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = (p->data[i] - level) * (p->data[i] - level);
    e += pairwise_sum(std::span<const double>(sq)) / static_cast<double>(p->size());
  }
  return e * block_size * block_size;
}

inline YcbcrImage difference(const YcbcrImage& a, const YcbcrImage& b) {
  if (a.subsampled != b.subsampled || a.y.height != b.y.height || a.y.width != b.y.width)
    throw ArgumentError("difference: image layouts differ");
  YcbcrImage d = a;
  auto sub = [](Plane<double>& x, const Plane<double>& y) {
    for (std::size_t i = 0; i < x.size(); ++i) x.data[i] -= y.data[i];
  };
  sub(d.y, b.y);
  sub(d.cb, b.cb);
  sub(d.cr, b.cr);
  return d;
}

// Energy of the channels a selection drops, in channel_energy units.
inline double dropped_energy(const EnergyProfile& p, const ChannelSelection& sel) {
  if (sel.total != static_cast<int>(p.per_channel.size()))
    throw ArgumentError("dropped_energy: selection total != profile length");
  std::vector<double> dropped;
  for (int ch = 0; ch < sel.total; ++ch)
    if (!sel.contains(ch)) dropped.push_back(p.per_channel[ch]);
  return pairwise_sum(std::span<const double>(dropped));
}

inline void write_profile_csv(const EnergyProfile& p, std::ostream& os) {
  os << "channel_index,component,u,v,zigzag_pos,energy\n";
  for (std::size_t ch = 0; ch < p.per_channel.size(); ++ch) {
    const auto& d = p.descriptors[ch];
    os << ch << ',' << component_name(d.component) << ',' << int(d.u) << ',' << int(d.v) << ',' << p.zigzag_pos[ch]
       << ',' << format_double(p.per_channel[ch]) << '\n';
  }
}

inline void write_zigzag_csv(const EnergyProfile& p, std::ostream& os) {
  const auto z = zigzag_profile(p);
  const auto order = zigzag_order(p.block_size);
  const int nn = p.block_size * p.block_size;
  os << "component,zigzag_pos,channel_index,energy,cumulative_fraction\n";
  for (int comp = 0; comp < 3; ++comp) {
    const auto& seq = z.components[comp];
    const double total = pairwise_sum(std::span<const double>(seq));
    double running = 0.0;
    for (int k = 0; k < nn; ++k) {
      running += seq[k];
      os << component_name(static_cast<Component>(comp)) << ',' << k << ',' << comp * nn + order[k] << ','
         << format_double(seq[k]) << ',' << format_double(total > 0 ? running / total : 0.0) << '\n';
    }
  }
}

}  // namespace densedct
