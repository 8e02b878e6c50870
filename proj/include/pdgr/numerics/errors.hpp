#pragma once

#include <stdexcept>
#include <string>

namespace pdgr {

/// Base of every error raised by the library. The CLI maps `IoError` to exit
/// code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define PDGR_DEFINE_ERROR(Name)          \
  class Name : public Error {            \
   public:                               \
    explicit Name(const std::string& m)  \
        : Error(#Name ": " + m) {}       \
  }

// numerics
PDGR_DEFINE_ERROR(ShapeMismatch);
PDGR_DEFINE_ERROR(DomainError);
PDGR_DEFINE_ERROR(InvalidAxis);
PDGR_DEFINE_ERROR(NonScalarRoot);
PDGR_DEFINE_ERROR(InvalidStep);
PDGR_DEFINE_ERROR(CheckpointError);

// rwkv / agt
PDGR_DEFINE_ERROR(ChannelsNotDivisibleBy4);
PDGR_DEFINE_ERROR(NonFiniteCoordinate);
PDGR_DEFINE_ERROR(KTooLarge);
PDGR_DEFINE_ERROR(InvalidConfig);

// dg losses
PDGR_DEFINE_ERROR(TooFewRows);
PDGR_DEFINE_ERROR(LabelOutOfRange);

// model
PDGR_DEFINE_ERROR(CoordOutOfRange);
PDGR_DEFINE_ERROR(MTooLarge);

// data
PDGR_DEFINE_ERROR(UnknownClass);
PDGR_DEFINE_ERROR(ParseError);
PDGR_DEFINE_ERROR(CountMismatch);
PDGR_DEFINE_ERROR(DegenerateCloud);
PDGR_DEFINE_ERROR(IoError);

#undef PDGR_DEFINE_ERROR

}  // namespace pdgr
