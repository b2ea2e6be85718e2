#pragma once

#include <stdexcept>
#include <string>

namespace toolpref {

// Base for every error raised by the library. Callers that only care about
// "something in toolpref failed" catch this; tests match the concrete type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define TOOLPREF_DEFINE_ERROR(Name)        \
  class Name : public Error {              \
   public:                                 \
    using Error::Error;                    \
  };

// trajectory_model
TOOLPREF_DEFINE_ERROR(SchemaError)
TOOLPREF_DEFINE_ERROR(UnknownNode)

enum class StructureFault { Cycle, Orphan, NonLeafFinish, DuplicateId, NoRoot, MultipleRoots, BadRoot };

class StructureError : public Error {
 public:
  StructureError(StructureFault fault, const std::string& what) : Error(what), fault_(fault) {}
  StructureFault fault() const noexcept { return fault_; }

 private:
  StructureFault fault_;
};

// preference_forge
TOOLPREF_DEFINE_ERROR(MissingDoc)
TOOLPREF_DEFINE_ERROR(InsufficientData)

// policy_core / preference_trainer
TOOLPREF_DEFINE_ERROR(MaskedAction)
TOOLPREF_DEFINE_ERROR(EmptyCandidates)
TOOLPREF_DEFINE_ERROR(MissingCandidateRecord)
TOOLPREF_DEFINE_ERROR(EmptyBatch)
TOOLPREF_DEFINE_ERROR(CheckpointError)

// dfsdt_engine
TOOLPREF_DEFINE_ERROR(SchemaMismatch)
TOOLPREF_DEFINE_ERROR(UnknownTask)

// tool_world
TOOLPREF_DEFINE_ERROR(ConfigError)
TOOLPREF_DEFINE_ERROR(UnknownTool)

// eval_harness
TOOLPREF_DEFINE_ERROR(UnpairedTask)
TOOLPREF_DEFINE_ERROR(NoQualifyingSamples)
TOOLPREF_DEFINE_ERROR(ZeroBaseline)

#undef TOOLPREF_DEFINE_ERROR

}  // namespace toolpref
