/* Phase boundaries for interrupt-mode profiling.
 *
 * A workload built against this header calls cxlmem_phase_boundary() once
 * when initialization ends and once when computation ends. Under the
 * supervisor each call stops the process until its memory has been sampled;
 * run any other way the process stays stopped, so only call it when asked
 * to (for example behind a command-line flag). C and C++ compatible.
 */
#ifndef CXLMEM_SELFSTOP_H
#define CXLMEM_SELFSTOP_H

#include <signal.h>

static inline void cxlmem_phase_boundary(void) { raise(SIGSTOP); }

#endif
