#include "ckm/env/ckm_map.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ckm::env {

double gain_db_to_gray(double gain_db) {
  if (!(gain_db >= kGainMinDb && gain_db <= kGainMaxDb)) {
    std::ostringstream os;
    os << "gain " << gain_db << " dB outside [" << kGainMinDb << ", " << kGainMaxDb << "]";
    throw RangeError(os.str());
  }
  return (gain_db - kGainMinDb) * kGrayPerDb;
}

double gray_to_gain_db(double gray) {
  if (!(gray >= 0.0 && gray <= 1.0)) {
    std::ostringstream os;
    os << "gray value " << gray << " outside [0, 1]";
    throw RangeError(os.str());
  }
  return gray / kGrayPerDb + kGainMinDb;
}

namespace {

void check_sizes(std::size_t side, std::size_t values, std::size_t mask) {
  if (values != side * side || mask != side * side) {
    throw std::invalid_argument("CKM of side " + std::to_string(side) + " needs " +
                                std::to_string(side * side) + " cells, got " +
                                std::to_string(values) + " values and " + std::to_string(mask) +
                                " mask entries");
  }
}

}  // namespace

Ckm Ckm::from_gains(std::size_t side, std::vector<double> gains_db, std::vector<std::uint8_t> mask,
                    BsLocation owner, std::string env_ref) {
  check_sizes(side, gains_db.size(), mask.size());
  Ckm m;
  m.side_ = side;
  m.gray_.resize(gains_db.size());
  for (std::size_t i = 0; i < gains_db.size(); ++i) m.gray_[i] = gain_db_to_gray(gains_db[i]);
  m.gains_db_ = std::move(gains_db);
  m.mask_ = std::move(mask);
  m.owner_ = owner;
  m.env_ref_ = std::move(env_ref);
  return m;
}

Ckm Ckm::from_gray(std::size_t side, std::vector<double> gray, std::vector<std::uint8_t> mask,
                   BsLocation owner, std::string env_ref) {
  check_sizes(side, gray.size(), mask.size());
  Ckm m;
  m.side_ = side;
  m.gains_db_.resize(gray.size());
  for (std::size_t i = 0; i < gray.size(); ++i) m.gains_db_[i] = gray_to_gain_db(gray[i]);
  m.gray_ = std::move(gray);
  m.mask_ = std::move(mask);
  m.owner_ = owner;
  m.env_ref_ = std::move(env_ref);
  return m;
}

void Ckm::validate() const {
  check_sizes(side_, gains_db_.size(), mask_.size());
  for (std::size_t i = 0; i < gains_db_.size(); ++i) {
    if (!(gains_db_[i] >= kGainMinDb && gains_db_[i] <= kGainMaxDb))
      throw std::logic_error("gain out of range at cell " + std::to_string(i));
    if (std::abs(gray_[i] - (gains_db_[i] - kGainMinDb) * kGrayPerDb) > 1e-12)
      throw std::logic_error("gray and gain disagree at cell " + std::to_string(i));
  }
  const auto bs = static_cast<std::size_t>(owner_.cell.row) * side_ + owner_.cell.col;
  if (bs >= mask_.size() || mask_[bs]) throw std::logic_error("owner BS is not on a free cell");
}

}  // namespace ckm::env
