#pragma once

#include <stdexcept>
#include <string>

namespace prunelab {

// Base for everything thrown by the library. Each concrete type corresponds
// to one failure condition so callers (and tests) can catch them precisely.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define PRUNELAB_DEFINE_ERROR(Name) \
  struct Name : Error {             \
    using Error::Error;             \
  }

// tensor / autodiff
PRUNELAB_DEFINE_ERROR(DimensionMismatch);
PRUNELAB_DEFINE_ERROR(NotScalar);
PRUNELAB_DEFINE_ERROR(NonFinite);
PRUNELAB_DEFINE_ERROR(InvalidArg);

// models
PRUNELAB_DEFINE_ERROR(InvalidSpec);
PRUNELAB_DEFINE_ERROR(LabelOutOfRange);
PRUNELAB_DEFINE_ERROR(MissingParameter);

// optimizers / schedules
PRUNELAB_DEFINE_ERROR(EpochOutOfRange);

// pruning
PRUNELAB_DEFINE_ERROR(InvalidSparsity);
PRUNELAB_DEFINE_ERROR(ZeroSaliency);
PRUNELAB_DEFINE_ERROR(AlreadyPruned);
PRUNELAB_DEFINE_ERROR(DensityIncrease);

// data
PRUNELAB_DEFINE_ERROR(BadMagic);
PRUNELAB_DEFINE_ERROR(TruncatedFile);
PRUNELAB_DEFINE_ERROR(CountMismatch);

// experiments
PRUNELAB_DEFINE_ERROR(BudgetExceeded);
PRUNELAB_DEFINE_ERROR(EmptyDataset);
PRUNELAB_DEFINE_ERROR(EmptyResults);
PRUNELAB_DEFINE_ERROR(IoError);
PRUNELAB_DEFINE_ERROR(VersionMismatch);
PRUNELAB_DEFINE_ERROR(CorruptPayload);
PRUNELAB_DEFINE_ERROR(ConfigError);

// cli
PRUNELAB_DEFINE_ERROR(InvalidValue);

#undef PRUNELAB_DEFINE_ERROR

}  // namespace prunelab
