#pragma once

#include <stdexcept>
#include <string>

namespace ecg {

// Base error carrying the CLI exit code: 2 usage, 3 data, 4 numeric.
class Error : public std::runtime_error {
public:
  Error(const std::string& what, int exit_code)
      : std::runtime_error(what), exit_code_(exit_code) {}
  int exit_code() const noexcept { return exit_code_; }

private:
  int exit_code_;
};

class UsageError : public Error {
public:
  explicit UsageError(const std::string& w) : Error(w, 2) {}
};

class DataError : public Error {
public:
  explicit DataError(const std::string& w) : Error(w, 3) {}
};

class NumericError : public Error {
public:
  explicit NumericError(const std::string& w) : Error(w, 4) {}
};

#define ECG_ERROR(NAME, BASE)                                           \
  class NAME : public BASE {                                            \
  public:                                                               \
    explicit NAME(const std::string& m) : BASE(std::string(#NAME ": ") + m) {} \
  }

// record_io
ECG_ERROR(MalformedHeader, DataError);
ECG_ERROR(UnsupportedFormat, DataError);
ECG_ERROR(TruncatedFile, DataError);
ECG_ERROR(ValueOutOfRange, DataError);
ECG_ERROR(MalformedAnnotationLine, DataError);
ECG_ERROR(UnsortedAnnotations, DataError);

// dsp_preprocess
ECG_ERROR(EvenWindow, DataError);
ECG_ERROR(WindowLargerThanSignal, DataError);
ECG_ERROR(EmptySignal, DataError);
ECG_ERROR(DegenerateVariance, NumericError);

// segmentation
ECG_ERROR(EmptyWindow, DataError);
ECG_ERROR(MissingRecord, DataError);

// tensor_engine / model_zoo
ECG_ERROR(ShapeMismatch, NumericError);
ECG_ERROR(PoolLargerThanInput, DataError);
ECG_ERROR(InvalidSpec, DataError);

// training / evaluation
ECG_ERROR(EmptyInput, DataError);
ECG_ERROR(TestSplitInTraining, DataError);
ECG_ERROR(LengthMismatch, DataError);

// introspection
ECG_ERROR(UnknownLayerTag, DataError);
ECG_ERROR(WrongBinCount, DataError);

// cli / config
ECG_ERROR(UnknownField, DataError);
ECG_ERROR(InvalidValue, DataError);
ECG_ERROR(MissingCheckpoint, DataError);

#undef ECG_ERROR

}  // namespace ecg
