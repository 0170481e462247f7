#include "bachkit/error.hpp"

namespace bachkit {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Shape: return "shape error";
    case ErrorKind::Parameter: return "parameter error";
    case ErrorKind::Numeric: return "numeric error";
    case ErrorKind::Taxonomy: return "taxonomy error";
    case ErrorKind::Validation: return "validation error";
    case ErrorKind::EmptyInstance: return "empty-instance error";
    case ErrorKind::Ingestion: return "ingestion error";
    case ErrorKind::DegenerateBackground: return "degenerate-background error";
    case ErrorKind::Comparison: return "comparison error";
    case ErrorKind::Retrieval: return "retrieval error";
    case ErrorKind::Fusion: return "fusion error";
    case ErrorKind::Training: return "training error";
    case ErrorKind::Configuration: return "configuration error";
    case ErrorKind::NotFound: return "not found";
    case ErrorKind::Io: return "i/o error";
  }
  return "error";
}

const char* error_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Parameter: return "parameter";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Taxonomy: return "taxonomy";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::EmptyInstance: return "empty_instance";
    case ErrorKind::Ingestion: return "ingestion";
    case ErrorKind::DegenerateBackground: return "degenerate_background";
    case ErrorKind::Comparison: return "comparison";
    case ErrorKind::Retrieval: return "retrieval";
    case ErrorKind::Fusion: return "fusion";
    case ErrorKind::Training: return "training";
    case ErrorKind::Configuration: return "configuration";
    case ErrorKind::NotFound: return "not_found";
    case ErrorKind::Io: return "io";
  }
  return "error";
}

}  // namespace bachkit
