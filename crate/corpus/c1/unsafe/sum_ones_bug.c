// assume(forall i in [0, N) :: A[i] == 1)
s = 1;
for (i = 0; i < N; i++) {
  s = s + A[i];
}
// assert(s == N)
